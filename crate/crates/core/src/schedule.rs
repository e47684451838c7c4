//! Noise schedule and reverse-time discretisation.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use crate::error::{contract, Error, Result};

/// Survival function `α_t`: probability that a token is still clean at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseSchedule {
    /// `α_t = 1 - t`.
    #[default]
    Linear,
}

fn check_time(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(contract(format!("time {t} outside [0, 1]")))
    }
}

fn check_order(s: f64, t: f64) -> Result<()> {
    check_time(s)?;
    check_time(t)?;
    if s < t {
        Ok(())
    } else {
        Err(contract(format!("expected s < t, got s={s}, t={t}")))
    }
}

impl NoiseSchedule {
    pub fn alpha(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(match self {
            NoiseSchedule::Linear => 1.0 - t,
        })
    }

    /// `1 - α_t`, evaluated without cancellation.
    pub fn mask_prob(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(match self {
            NoiseSchedule::Linear => t,
        })
    }

    /// `dα/dt`.
    pub fn alpha_derivative(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(match self {
            NoiseSchedule::Linear => -1.0,
        })
    }

    /// Forward survival ratio `α_t / α_s` for `s < t`.
    pub fn fwd_ratio(&self, s: f64, t: f64) -> Result<f64> {
        check_order(s, t)?;
        let alpha_s = self.alpha(s)?;
        if alpha_s == 0.0 {
            return Err(Error::DivisionDomain { what: "fwd_ratio", detail: format!("alpha({s}) = 0") });
        }
        Ok(self.alpha(t)? / alpha_s)
    }

    /// Reverse stay-masked ratio `(1 - α_s) / (1 - α_t)` for `s < t`.
    pub fn rev_ratio(&self, s: f64, t: f64) -> Result<f64> {
        check_order(s, t)?;
        let masked_t = self.mask_prob(t)?;
        if masked_t == 0.0 {
            return Err(Error::DivisionDomain { what: "rev_ratio", detail: format!("alpha({t}) = 1") });
        }
        Ok(self.mask_prob(s)? / masked_t)
    }

    /// Probability that a masked token at `t` is decoded by `s`:
    /// `(α_s - α_t) / (1 - α_t)`.
    pub fn decode_prob(&self, s: f64, t: f64) -> Result<f64> {
        check_order(s, t)?;
        let masked_t = self.mask_prob(t)?;
        if masked_t == 0.0 {
            return Err(Error::DivisionDomain { what: "decode_prob", detail: format!("alpha({t}) = 1") });
        }
        Ok((masked_t - self.mask_prob(s)?) / masked_t)
    }

    /// Time weight `-α'_t / (1 - α_t)` of the continuous-time objective.
    pub fn loss_weight(&self, t: f64) -> Result<f64> {
        let masked = self.mask_prob(t)?;
        if masked == 0.0 {
            return Err(Error::DivisionDomain { what: "loss_weight", detail: "alpha(t) = 1".into() });
        }
        Ok(-self.alpha_derivative(t)? / masked)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimelineKind {
    #[default]
    Linear,
    Arccos,
    Square,
    Cosine,
}

impl TimelineKind {
    pub const ALL: [TimelineKind; 4] =
        [TimelineKind::Linear, TimelineKind::Arccos, TimelineKind::Square, TimelineKind::Cosine];

    fn point(&self, u: f64) -> f64 {
        match self {
            TimelineKind::Linear => 1.0 - u,
            TimelineKind::Cosine => (FRAC_PI_2 * u).cos(),
            TimelineKind::Square => 1.0 - u * u,
            TimelineKind::Arccos => (2.0 / PI) * u.acos(),
        }
    }
}

impl fmt::Display for TimelineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TimelineKind::Linear => "linear",
            TimelineKind::Arccos => "arccos",
            TimelineKind::Square => "square",
            TimelineKind::Cosine => "cosine",
        })
    }
}

impl FromStr for TimelineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(TimelineKind::Linear),
            "arccos" => Ok(TimelineKind::Arccos),
            "square" => Ok(TimelineKind::Square),
            "cosine" => Ok(TimelineKind::Cosine),
            other => Err(contract(format!("unknown timeline kind {other:?}"))),
        }
    }
}

/// Reverse timeline `T^1 = 1 > T^2 > ... > T^{K+1} = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    kind: TimelineKind,
    points: Vec<f64>,
}

impl Timeline {
    pub fn kind(&self) -> TimelineKind {
        self.kind
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Number of reverse steps `K`.
    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }

    /// `(t, s)` pairs for steps `1..=K`.
    pub fn intervals(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.points.windows(2).map(|w| (w[0], w[1]))
    }
}

pub fn timeline_points(steps: usize, kind: TimelineKind) -> Result<Timeline> {
    if steps == 0 {
        return Err(contract("timeline needs at least one step"));
    }
    let mut points: Vec<f64> = (0..=steps).map(|k| kind.point(k as f64 / steps as f64)).collect();
    // Endpoints are pinned so the last step always decodes every mask.
    points[0] = 1.0;
    points[steps] = 0.0;
    Ok(Timeline { kind, points })
}
