//! Forward corruption, transition matrices and the reverse kernel.
//!
//! The forward kernel keeps a valid token with probability `α_{t|s}` and
//! otherwise moves it to one of the `m` mask indices uniformly; a mask token
//! re-draws its index uniformly. The reverse kernel at a masked position puts
//! `(α_s - α_t) / (1 - α_t)` on the clean-data prediction and
//! `(1 - α_s) / (m (1 - α_t))` on each mask index.

use std::fmt::Write as _;

use rand::Rng;

use crate::dataset::{ToyDataset, ENUMERATION_LIMIT};
use crate::error::{contract, Error, Result};
use crate::schedule::NoiseSchedule;
use crate::vocab::{Label, Sequence, Token, VocabSpec};

/// Corrupt `x0` to time `t`: each position independently survives with
/// probability `α_t`, otherwise it becomes a uniformly chosen mask index.
pub fn corrupt<R: Rng + ?Sized>(
    x0: &Sequence,
    t: f64,
    sched: NoiseSchedule,
    spec: VocabSpec,
    rng: &mut R,
) -> Result<Sequence> {
    if !x0.is_clean() || !x0.conforms_to(spec) {
        return Err(contract("corrupt expects a clean sequence under the given vocabulary"));
    }
    let alpha = sched.alpha(t)?;
    let tokens = x0
        .tokens()
        .iter()
        .map(|&tok| {
            if rng.gen::<f64>() < alpha {
                tok
            } else {
                Token::Mask(rng.gen_range(1..=spec.m()))
            }
        })
        .collect();
    Ok(Sequence::from_tokens_unchecked(tokens))
}

/// `q(x_t = to | x_s = from)` for one position.
pub fn forward_step_prob(
    from: Token,
    to: Token,
    s: f64,
    t: f64,
    sched: NoiseSchedule,
    spec: VocabSpec,
) -> Result<f64> {
    if !spec.contains(from) || !spec.contains(to) {
        return Err(contract("token outside vocabulary"));
    }
    let keep = sched.fwd_ratio(s, t)?;
    let m = spec.m() as f64;
    Ok(match (from, to) {
        (Token::Valid(a), Token::Valid(b)) if a == b => keep,
        (Token::Valid(_), Token::Mask(_)) => (1.0 - keep) / m,
        (Token::Mask(_), Token::Mask(_)) => 1.0 / m,
        _ => 0.0,
    })
}

/// Dense `(d+m) x (d+m)` row-stochastic matrix `Q_{t|s}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    spec: VocabSpec,
    s: f64,
    t: f64,
    entries: Vec<f64>,
}

impl TransitionMatrix {
    pub fn spec(&self) -> VocabSpec {
        self.spec
    }

    pub fn times(&self) -> (f64, f64) {
        (self.s, self.t)
    }

    pub fn dim(&self) -> usize {
        self.spec.size()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.dim() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let n = self.dim();
        &self.entries[row * n..(row + 1) * n]
    }

    /// Matrix product `self · other`, labelled with the outer times.
    pub fn compose(&self, other: &TransitionMatrix) -> Result<TransitionMatrix> {
        if self.spec != other.spec {
            return Err(contract("cannot compose matrices over different vocabularies"));
        }
        let n = self.dim();
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.entries[i * n + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    entries[i * n + j] += a * other.entries[k * n + j];
                }
            }
        }
        Ok(TransitionMatrix { spec: self.spec, s: self.s, t: other.t, entries })
    }

    pub fn max_abs_diff(&self, other: &TransitionMatrix) -> f64 {
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let n = self.dim();
        let mut out = String::new();
        let header: Vec<String> = (0..n).map(|j| format!("c{j}")).collect();
        let _ = writeln!(out, "row,{}", header.join(","));
        for i in 0..n {
            let cells: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{i},{}", cells.join(","));
        }
        out
    }
}

/// Builds `Q_{t|s} = α I + (1 - α) M + π` block by block, where `α = α_{t|s}`.
pub fn transition_matrix(spec: VocabSpec, s: f64, t: f64, sched: NoiseSchedule) -> Result<TransitionMatrix> {
    let keep = sched.fwd_ratio(s, t)?;
    let (d, n) = (spec.d(), spec.size());
    let share = 1.0 / spec.m() as f64;
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        let row = &mut entries[i * n..(i + 1) * n];
        if i < d {
            row[i] = keep;
            for cell in &mut row[d..] {
                *cell = (1.0 - keep) * share;
            }
        } else {
            for cell in &mut row[d..] {
                *cell = share;
            }
        }
    }
    Ok(TransitionMatrix { spec, s, t, entries })
}

/// Per-position marginal `q(x_t | x_0)` over the flat vocabulary.
pub fn forward_marginal(x0: &Sequence, t: f64, sched: NoiseSchedule, spec: VocabSpec) -> Result<Vec<Vec<f64>>> {
    if !x0.is_clean() || !x0.conforms_to(spec) {
        return Err(contract("forward_marginal expects a clean sequence"));
    }
    let alpha = sched.alpha(t)?;
    let mask_each = sched.mask_prob(t)? / spec.m() as f64;
    Ok(x0
        .tokens()
        .iter()
        .map(|tok| {
            let mut row = vec![0.0; spec.size()];
            row[tok.flat_unchecked(spec.d())] = alpha;
            for cell in &mut row[spec.d()..] {
                *cell = mask_each;
            }
            row
        })
        .collect())
}

/// Distribution of one position of `x_s` over the flat vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct ReverseDistribution {
    probs: Vec<f64>,
}

impl ReverseDistribution {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Total mass on mask slots.
    pub fn mask_mass(&self, spec: VocabSpec) -> f64 {
        self.probs[spec.d()..].iter().sum()
    }

    pub fn max_abs_diff(&self, other: &ReverseDistribution) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `q(x_s | x_t)` at one position, given the clean-token prediction `p`.
pub fn reverse_step_distribution(
    x_t: Token,
    p: &[f64],
    s: f64,
    t: f64,
    sched: NoiseSchedule,
    spec: VocabSpec,
) -> Result<ReverseDistribution> {
    if !spec.contains(x_t) {
        return Err(contract("token outside vocabulary"));
    }
    if p.len() != spec.d() {
        return Err(contract(format!("prediction has {} entries, expected d={}", p.len(), spec.d())));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 || p.iter().any(|v| *v < 0.0) {
        return Err(contract(format!("prediction is not a distribution (sum {total})")));
    }
    let mut probs = vec![0.0; spec.size()];
    match x_t {
        Token::Valid(_) => {
            // s < t is still required of callers.
            sched.decode_prob(s, t)?;
            probs[x_t.flat_unchecked(spec.d())] = 1.0;
        }
        Token::Mask(_) => {
            let decode = sched.decode_prob(s, t)?;
            let stay_each = sched.rev_ratio(s, t)? / spec.m() as f64;
            for (slot, pv) in probs.iter_mut().zip(p) {
                *slot = decode * pv;
            }
            for slot in &mut probs[spec.d()..] {
                *slot = stay_each;
            }
        }
    }
    Ok(ReverseDistribution { probs })
}

/// Brute-force reverse kernel: marginalises the two-case kernel
/// `q(x_s^i | x_t^i, x_0^i)` over the exact posterior `q(x_0 | x_t, label)`
/// of an enumerable dataset.
pub fn exact_reverse_oracle(
    dataset: &ToyDataset,
    x_t: &Sequence,
    s: f64,
    t: f64,
    sched: NoiseSchedule,
    spec: VocabSpec,
    label: Label,
) -> Result<Vec<ReverseDistribution>> {
    if dataset.examples().len() > ENUMERATION_LIMIT {
        return Err(contract("dataset support too large to enumerate"));
    }
    if x_t.len() != dataset.seq_len() || !x_t.conforms_to(spec) || spec.d() != dataset.spec().d() {
        return Err(contract("x_t does not match the dataset shape"));
    }
    let alpha_t = sched.alpha(t)?;
    let alpha_s = sched.alpha(s)?;
    if s >= t {
        return Err(contract(format!("expected s < t, got s={s}, t={t}")));
    }
    let m = spec.m() as f64;

    // Unnormalised posterior: prior weight times the per-position forward
    // likelihoods, α_t [x_t = x_0] when observed and (1 - α_t)/m when masked.
    let mut posterior: Vec<(&Sequence, f64)> = Vec::new();
    for ex in dataset.examples_for(label)? {
        let mut w = ex.weight;
        for (obs, clean) in x_t.tokens().iter().zip(ex.x0.tokens()) {
            w *= match obs {
                Token::Mask(_) => (1.0 - alpha_t) / m,
                valid if valid == clean => alpha_t,
                _ => 0.0,
            };
        }
        if w > 0.0 {
            posterior.push((&ex.x0, w));
        }
    }
    let z: f64 = posterior.iter().map(|(_, w)| w).sum();
    if posterior.is_empty() || !(z > 0.0) {
        return Err(Error::NoSupport);
    }

    let decode = (alpha_s - alpha_t) / (1.0 - alpha_t);
    let stay_each = (1.0 - alpha_s) / (m * (1.0 - alpha_t));
    let out = x_t
        .tokens()
        .iter()
        .enumerate()
        .map(|(i, obs)| {
            let mut probs = vec![0.0; spec.size()];
            for (x0, w) in &posterior {
                let weight = w / z;
                match obs {
                    Token::Valid(_) => probs[obs.flat_unchecked(spec.d())] += weight,
                    Token::Mask(_) => {
                        probs[x0.tokens()[i].flat_unchecked(spec.d())] += weight * decode;
                        for slot in &mut probs[spec.d()..] {
                            *slot += weight * stay_each;
                        }
                    }
                }
            }
            ReverseDistribution { probs }
        })
        .collect();
    Ok(out)
}
