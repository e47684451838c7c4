//! Clean-data predictors `p(x_0^i | x_t, c)`.
//!
//! [`ExactPosteriorDenoiser`] returns the Bayes posterior of an enumerable
//! dataset and serves as the reference every sampler is checked against.
//! [`LinearSoftmaxDenoiser`] is a small trainable model: per-position logits
//! are a sum of a position bias, a class bias and one pairwise term per
//! context position.

use std::path::Path;

use crate::dataset::ToyDataset;
use crate::error::{contract, Error, Result};
use crate::schedule::NoiseSchedule;
use crate::vocab::{Label, Sequence, VocabSpec};

/// Logit assigned to clean tokens with zero posterior probability. Finite so
/// guidance arithmetic never produces `inf - inf`.
pub const ZERO_PROB_LOGIT: f64 = -700.0;

/// Row-major `L x d` table of per-position values over the valid tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionTable {
    d: usize,
    values: Vec<f64>,
}

impl PositionTable {
    pub fn new(d: usize, values: Vec<f64>) -> Result<Self> {
        if d == 0 || values.len() % d != 0 || values.is_empty() {
            return Err(contract(format!("table of {} values is not a multiple of d={d}", values.len())));
        }
        Ok(Self { d, values })
    }

    pub fn zeros(len: usize, d: usize) -> Self {
        Self { d, values: vec![0.0; len * d] }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn position_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.d)
    }

    /// Row-wise softmax.
    pub fn softmax(&self) -> PositionTable {
        let mut out = self.clone();
        for row in out.values.chunks_mut(self.d) {
            softmax_in_place(row);
        }
        out
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&self) -> PositionTable {
        let mut out = self.clone();
        for row in out.values.chunks_mut(self.d) {
            let lse = log_sum_exp(row);
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        out
    }
}

/// Per-position logits over valid tokens.
pub type Logits = PositionTable;

/// Per-position distributions over valid tokens.
pub type DenoiserOutput = PositionTable;

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub trait Denoiser: Sync {
    fn spec(&self) -> VocabSpec;

    fn seq_len(&self) -> usize;

    fn num_classes(&self) -> usize;

    fn predict_logits(&self, x_t: &Sequence, t: f64, label: Label) -> Result<Logits>;

    fn predict(&self, x_t: &Sequence, t: f64, label: Label) -> Result<DenoiserOutput> {
        Ok(self.predict_logits(x_t, t, label)?.softmax())
    }

    /// Shared argument validation for implementors.
    fn check_input(&self, x_t: &Sequence, label: Label) -> Result<()> {
        if x_t.len() != self.seq_len() {
            return Err(contract(format!("sequence length {} but denoiser expects {}", x_t.len(), self.seq_len())));
        }
        if !x_t.conforms_to(self.spec()) {
            return Err(contract("sequence does not conform to the denoiser vocabulary"));
        }
        label.row(self.num_classes())?;
        Ok(())
    }
}

/// Bayes posterior marginals `q(x_0^i = v | x_t, label)` of a dataset under
/// the forward process.
#[derive(Debug, Clone)]
pub struct ExactPosteriorDenoiser {
    dataset: ToyDataset,
    sched: NoiseSchedule,
}

impl ExactPosteriorDenoiser {
    pub fn new(dataset: ToyDataset, sched: NoiseSchedule) -> Self {
        Self { dataset, sched }
    }

    pub fn dataset(&self) -> &ToyDataset {
        &self.dataset
    }

    /// Posterior marginals, or `None` when no example is consistent with `x_t`.
    ///
    /// Every consistent example has the same forward likelihood
    /// `α_t^(observed) · ((1 - α_t)/m)^(masked)`, so the posterior is the
    /// prior restricted to consistent examples and does not depend on `t`.
    /// This also covers `t = 1`, where observed tokens have likelihood zero
    /// but inpainting still supplies them.
    pub fn posterior(&self, x_t: &Sequence, t: f64, label: Label) -> Result<Option<DenoiserOutput>> {
        self.check_input(x_t, label)?;
        self.sched.alpha(t)?;
        let scored: Vec<(&Sequence, f64)> = self
            .dataset
            .examples_for(label)?
            .filter(|ex| ex.weight > 0.0)
            .filter(|ex| {
                x_t.tokens().iter().zip(ex.x0.tokens()).all(|(obs, clean)| obs.is_mask() || obs == clean)
            })
            .map(|ex| (&ex.x0, ex.weight.ln()))
            .collect();
        if scored.is_empty() {
            return Ok(None);
        }
        Ok(Some(self.marginals(&scored)))
    }

    fn marginals(&self, scored: &[(&Sequence, f64)]) -> DenoiserOutput {
        let d = self.dataset.spec().d();
        let max = scored.iter().map(|(_, w)| *w).fold(f64::NEG_INFINITY, f64::max);
        let mut out = PositionTable::zeros(self.dataset.seq_len(), d);
        let mut z = 0.0;
        for (x0, log_w) in scored {
            let w = (log_w - max).exp();
            z += w;
            for (i, tok) in x0.tokens().iter().enumerate() {
                out.position_mut(i)[tok.valid_index().expect("clean example")] += w;
            }
        }
        for v in out.values.iter_mut() {
            *v /= z;
        }
        out
    }

    /// Prior marginals for `label`, ignoring every observation.
    fn prior(&self, label: Label) -> Result<DenoiserOutput> {
        let scored: Vec<(&Sequence, f64)> = self
            .dataset
            .examples_for(label)?
            .filter(|e| e.weight > 0.0)
            .map(|e| (&e.x0, e.weight.ln()))
            .collect();
        if scored.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(self.marginals(&scored))
    }
}

impl Denoiser for ExactPosteriorDenoiser {
    fn spec(&self) -> VocabSpec {
        self.dataset.spec()
    }

    fn seq_len(&self) -> usize {
        self.dataset.seq_len()
    }

    fn num_classes(&self) -> usize {
        self.dataset.num_classes()
    }

    /// Sequences no example can explain (for instance two tokens decoded
    /// jointly into a combination absent from the data) fall back to the
    /// label's prior marginals, so samplers can keep going.
    fn predict(&self, x_t: &Sequence, t: f64, label: Label) -> Result<DenoiserOutput> {
        match self.posterior(x_t, t, label)? {
            Some(p) => Ok(p),
            None => self.prior(label),
        }
    }

    fn predict_logits(&self, x_t: &Sequence, t: f64, label: Label) -> Result<Logits> {
        let probs = self.predict(x_t, t, label)?;
        let values = probs
            .values()
            .iter()
            .map(|p| if *p > 0.0 { p.ln().max(ZERO_PROB_LOGIT) } else { ZERO_PROB_LOGIT })
            .collect();
        PositionTable::new(probs.d(), values)
    }
}

pub const PARAMS_MAGIC: &[u8; 4] = b"RHDN";
pub const PARAMS_VERSION: u32 = 1;
const FLAG_TIME_CHANNEL: u32 = 1;

/// Shape of a [`LinearSoftmaxDenoiser`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearShape {
    pub spec: VocabSpec,
    pub len: usize,
    pub classes: usize,
    /// Adds a `t · T[i, v]` term to every logit.
    pub time_channel: bool,
}

impl LinearShape {
    fn pair_len(&self) -> usize {
        self.len * self.len * self.spec.size() * self.spec.d()
    }

    fn bias_len(&self) -> usize {
        self.len * self.spec.d()
    }

    fn class_len(&self) -> usize {
        (self.classes + 1) * self.len * self.spec.d()
    }

    pub fn param_count(&self) -> usize {
        self.pair_len() + self.bias_len() + self.class_len() + if self.time_channel { self.bias_len() } else { 0 }
    }
}

/// `logits_i(v) = b[i,v] + C[c,i,v] + Σ_j W[i,j,flat(x_t^j),v] (+ t·T[i,v])`.
///
/// Parameters live in one flat vector laid out as `W`, `b`, `C`, `T`, which is
/// also the order used by gradients and the binary snapshot format.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSoftmaxDenoiser {
    shape: LinearShape,
    params: Vec<f64>,
}

impl LinearSoftmaxDenoiser {
    pub fn zeros(shape: LinearShape) -> Self {
        Self { shape, params: vec![0.0; shape.param_count()] }
    }

    pub fn from_params(shape: LinearShape, params: Vec<f64>) -> Result<Self> {
        if params.len() != shape.param_count() {
            return Err(contract(format!("expected {} parameters, got {}", shape.param_count(), params.len())));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(contract("parameters must be finite"));
        }
        Ok(Self { shape, params })
    }

    pub fn shape(&self) -> LinearShape {
        self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn pair_offset(&self, i: usize, j: usize, k: usize) -> usize {
        let sh = &self.shape;
        ((i * sh.len + j) * sh.spec.size() + k) * sh.spec.d()
    }

    pub fn bias_offset(&self, i: usize) -> usize {
        self.shape.pair_len() + i * self.shape.spec.d()
    }

    pub fn class_offset(&self, row: usize, i: usize) -> usize {
        let sh = &self.shape;
        sh.pair_len() + sh.bias_len() + (row * sh.len + i) * sh.spec.d()
    }

    pub fn time_offset(&self, i: usize) -> Option<usize> {
        let sh = &self.shape;
        sh.time_channel
            .then(|| sh.pair_len() + sh.bias_len() + sh.class_len() + i * sh.spec.d())
    }

    /// Accumulates `scale · g_i` into the gradient slots that logit row `i`
    /// depends on. `grad` has the same layout as the parameters.
    pub(crate) fn accumulate_grad(
        &self,
        grad: &mut [f64],
        flat: &[usize],
        t: f64,
        label_row: usize,
        i: usize,
        g: &[f64],
    ) {
        let d = self.shape.spec.d();
        let add = |grad: &mut [f64], off: usize, scale: f64| {
            for (slot, gv) in grad[off..off + d].iter_mut().zip(g) {
                *slot += scale * gv;
            }
        };
        add(grad, self.bias_offset(i), 1.0);
        add(grad, self.class_offset(label_row, i), 1.0);
        for (j, &k) in flat.iter().enumerate() {
            add(grad, self.pair_offset(i, j, k), 1.0);
        }
        if let Some(off) = self.time_offset(i) {
            add(grad, off, t);
        }
    }

    pub(crate) fn logits_flat(&self, flat: &[usize], t: f64, label_row: usize) -> Logits {
        let d = self.shape.spec.d();
        let len = self.shape.len;
        let mut out = PositionTable::zeros(len, d);
        for i in 0..len {
            let row = out.position_mut(i);
            let b = self.bias_offset(i);
            let c = self.class_offset(label_row, i);
            for v in 0..d {
                row[v] = self.params[b + v] + self.params[c + v];
            }
            for (j, &k) in flat.iter().enumerate() {
                let w = self.pair_offset(i, j, k);
                for (r, p) in row.iter_mut().zip(&self.params[w..w + d]) {
                    *r += p;
                }
            }
            if let Some(off) = self.time_offset(i) {
                for (r, p) in row.iter_mut().zip(&self.params[off..off + d]) {
                    *r += t * p;
                }
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let sh = &self.shape;
        let mut out = Vec::with_capacity(40 + 8 * self.params.len());
        out.extend_from_slice(PARAMS_MAGIC);
        for v in [
            PARAMS_VERSION,
            sh.len as u32,
            sh.spec.d() as u32,
            sh.spec.m() as u32,
            sh.classes as u32,
            if sh.time_channel { FLAG_TIME_CHANNEL } else { 0 },
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Format(format!("denoiser snapshot: {msg}"));
        if bytes.len() < 36 || &bytes[..4] != PARAMS_MAGIC {
            return Err(bad("missing magic header"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        if word(0) != PARAMS_VERSION as usize {
            return Err(bad(&format!("unsupported version {}", word(0))));
        }
        let spec = VocabSpec::new(word(2), word(3)).map_err(|e| bad(&e.to_string()))?;
        let shape = LinearShape {
            spec,
            len: word(1),
            classes: word(4),
            time_channel: word(5) & FLAG_TIME_CHANNEL as usize != 0,
        };
        let count = u64::from_le_bytes(bytes[28..36].try_into().unwrap()) as usize;
        if count != shape.param_count() || bytes.len() != 36 + 8 * count {
            return Err(bad("parameter count does not match header shape"));
        }
        let params = bytes[36..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_params(shape, params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

impl Denoiser for LinearSoftmaxDenoiser {
    fn spec(&self) -> VocabSpec {
        self.shape.spec
    }

    fn seq_len(&self) -> usize {
        self.shape.len
    }

    fn num_classes(&self) -> usize {
        self.shape.classes
    }

    fn predict_logits(&self, x_t: &Sequence, t: f64, label: Label) -> Result<Logits> {
        self.check_input(x_t, label)?;
        let row = label.row(self.shape.classes)?;
        Ok(self.logits_flat(&x_t.to_flat(self.shape.spec), t, row))
    }
}
