//! Classifier-free guidance.

use crate::denoiser::{Denoiser, DenoiserOutput, Logits, PositionTable};
use crate::error::{contract, Result};
use crate::vocab::{Label, Sequence};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CfgMode {
    Constant(f64),
    /// `w_k = lo + (hi - lo) (k - 1) / max(K - 1, 1)` at step `k` of `K`.
    LinearIncreasing { lo: f64, hi: f64 },
}

/// Where conditional and unconditional predictions are interpolated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GuidanceSpace {
    #[default]
    Logit,
    /// `p_u + w (p_c - p_u)`, clipped at zero and renormalised.
    Probability,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CfgConfig {
    pub mode: CfgMode,
    pub space: GuidanceSpace,
}

impl Default for CfgConfig {
    fn default() -> Self {
        Self { mode: CfgMode::Constant(1.0), space: GuidanceSpace::Logit }
    }
}

impl CfgConfig {
    pub fn constant(w: f64) -> Self {
        Self { mode: CfgMode::Constant(w), ..Default::default() }
    }

    pub fn linear(lo: f64, hi: f64) -> Self {
        Self { mode: CfgMode::LinearIncreasing { lo, hi }, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            CfgMode::Constant(w) if w >= 0.0 && w.is_finite() => Ok(()),
            CfgMode::LinearIncreasing { lo, hi } if lo >= 0.0 && lo <= hi && hi.is_finite() => Ok(()),
            mode => Err(contract(format!("invalid guidance setting {mode:?}"))),
        }
    }

    /// Guidance strength at 1-based step `step` of `steps`.
    pub fn weight_at(&self, step: usize, steps: usize) -> f64 {
        match self.mode {
            CfgMode::Constant(w) => w,
            CfgMode::LinearIncreasing { lo, hi } => {
                let frac = step.saturating_sub(1) as f64 / steps.saturating_sub(1).max(1) as f64;
                lo + (hi - lo) * frac
            }
        }
    }
}

/// `uncond + w (cond - uncond)`, elementwise, evaluated as
/// `(1 - w) uncond + w cond` so `w = 0` and `w = 1` return the inputs exactly.
pub fn cfg_combine(uncond: &[f64], cond: &[f64], w: f64) -> Result<Vec<f64>> {
    if uncond.len() != cond.len() {
        return Err(contract(format!("guidance shape mismatch: {} vs {}", uncond.len(), cond.len())));
    }
    Ok(uncond.iter().zip(cond).map(|(u, c)| (1.0 - w) * u + w * c).collect())
}

/// Guided logits; `Null` labels are passed through unguided.
pub fn guided_logits<D: Denoiser + ?Sized>(
    den: &D,
    x_t: &Sequence,
    t: f64,
    label: Label,
    w: f64,
) -> Result<Logits> {
    let uncond = den.predict_logits(x_t, t, Label::Null)?;
    if label == Label::Null {
        return Ok(uncond);
    }
    let cond = den.predict_logits(x_t, t, label)?;
    PositionTable::new(uncond.d(), cfg_combine(uncond.values(), cond.values(), w)?)
}

/// Guided clean-token distributions.
///
/// `w = 0` and `w = 1` return the unconditional and conditional predictions
/// directly, so exact denoisers stay exact at those settings.
pub fn guided_probs<D: Denoiser + ?Sized>(
    den: &D,
    x_t: &Sequence,
    t: f64,
    label: Label,
    w: f64,
    space: GuidanceSpace,
) -> Result<DenoiserOutput> {
    if label == Label::Null || w == 0.0 {
        return den.predict(x_t, t, Label::Null);
    }
    if w == 1.0 {
        return den.predict(x_t, t, label);
    }
    match space {
        GuidanceSpace::Logit => Ok(guided_logits(den, x_t, t, label, w)?.softmax()),
        GuidanceSpace::Probability => {
            let uncond = den.predict(x_t, t, Label::Null)?;
            let cond = den.predict(x_t, t, label)?;
            let mut mixed = PositionTable::new(uncond.d(), cfg_combine(uncond.values(), cond.values(), w)?)?;
            for i in 0..mixed.len() {
                let row = mixed.position_mut(i);
                for v in row.iter_mut() {
                    *v = v.max(0.0);
                }
                let z: f64 = row.iter().sum();
                if z > 0.0 {
                    row.iter_mut().for_each(|v| *v /= z);
                } else {
                    let uniform = 1.0 / row.len() as f64;
                    row.iter_mut().for_each(|v| *v = uniform);
                }
            }
            Ok(mixed)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combine_examples() {
        let u = [0.3, -1.2, 4.0];
        let c = [1.7, 0.25, -2.5];
        assert_eq!(cfg_combine(&u, &c, 0.0).unwrap(), u.to_vec());
        assert_eq!(cfg_combine(&u, &c, 1.0).unwrap(), c.to_vec());
        assert_eq!(cfg_combine(&[0.0], &[1.0], 2.0).unwrap(), vec![2.0]);
        assert!(cfg_combine(&[0.0], &[1.0, 2.0], 1.0).is_err());
    }

    #[test]
    fn schedule_endpoints() {
        let cfg = CfgConfig::linear(1.0, 6.5);
        assert_eq!(cfg.weight_at(1, 12), 1.0);
        assert_eq!(cfg.weight_at(12, 12), 6.5);
        assert_eq!(cfg.weight_at(1, 1), 1.0);
        assert_eq!(CfgConfig::constant(2.0).weight_at(5, 9), 2.0);
        assert!(CfgConfig::linear(2.0, 1.0).validate().is_err());
        assert!(CfgConfig::constant(-0.5).validate().is_err());
    }
}
