//! Masked cross-entropy objectives and the training loop for
//! [`LinearSoftmaxDenoiser`].
//!
//! All three losses share one corruption routine and one evaluator; they
//! differ only in the per-example time weight:
//!
//! | kind          | weight                |
//! |---------------|-----------------------|
//! | `DdmLinear`   | `1 / t`               |
//! | `DdmGeneral`  | `-α'_t / (1 - α_t)`   |
//! | `Mvtm`        | `1`                   |

use std::fmt;
use std::str::FromStr;

use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::Rng;

use crate::dataset::ToyDataset;
use crate::denoiser::{log_sum_exp, LinearShape, LinearSoftmaxDenoiser};
use crate::error::{contract, Error, Result};
use crate::kernels::corrupt;
use crate::rng::{seeded, stream};
use crate::schedule::NoiseSchedule;
use crate::vocab::{Label, LabeledExample, Sequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    #[default]
    DdmLinear,
    DdmGeneral,
    Mvtm,
}

impl LossKind {
    /// Per-example time weight of the cross-entropy.
    pub fn weight(&self, t: f64, sched: NoiseSchedule) -> Result<f64> {
        match self {
            LossKind::DdmLinear => Ok(1.0 / t),
            LossKind::DdmGeneral => sched.loss_weight(t),
            LossKind::Mvtm => Ok(1.0),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::DdmLinear => "ddm-linear",
            LossKind::DdmGeneral => "ddm-general",
            LossKind::Mvtm => "mvtm",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ddm-linear" => Ok(LossKind::DdmLinear),
            "ddm-general" => Ok(LossKind::DdmGeneral),
            "mvtm" => Ok(LossKind::Mvtm),
            other => Err(contract(format!("unknown loss kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(contract(format!("unknown optimizer {other:?}"))),
        }
    }
}

/// How training inputs are corrupted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptionSettings {
    /// Lower cutoff of the uniform time draw; bounds the `1/t` weight.
    pub t_min: f64,
    /// Probability of replacing the class label with `Null`.
    pub label_drop: f64,
}

impl Default for CorruptionSettings {
    fn default() -> Self {
        Self { t_min: 1e-3, label_drop: 0.1 }
    }
}

impl CorruptionSettings {
    fn validate(&self) -> Result<()> {
        if !(self.t_min > 0.0 && self.t_min < 1.0) {
            return Err(contract(format!("t_min must lie in (0, 1), got {}", self.t_min)));
        }
        if !(0.0..=1.0).contains(&self.label_drop) {
            return Err(contract(format!("label drop must lie in [0, 1], got {}", self.label_drop)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub corruption: CorruptionSettings,
    pub loss: LossKind,
    pub seed: u64,
    pub log_every: usize,
    pub time_channel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 64,
            learning_rate: 1e-2,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            corruption: CorruptionSettings::default(),
            loss: LossKind::DdmLinear,
            seed: 0,
            log_every: 100,
            time_channel: false,
        }
    }
}

/// One corrupted training input: the time, the noised sequence and the
/// (possibly dropped) label fed to the model.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionDraw {
    pub t: f64,
    pub x_t: Sequence,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub masked_count: usize,
}

/// Draws `t ~ U(t_min, 1)`, corrupts and applies label dropping, in that
/// order, once per example.
pub fn draw_corruptions<R: Rng + ?Sized>(
    batch: &[LabeledExample],
    sched: NoiseSchedule,
    spec: crate::vocab::VocabSpec,
    settings: &CorruptionSettings,
    rng: &mut R,
) -> Result<Vec<CorruptionDraw>> {
    settings.validate()?;
    batch
        .iter()
        .map(|ex| {
            let t = rng.gen_range(settings.t_min..1.0);
            let x_t = corrupt(&ex.x0, t, sched, spec, rng)?;
            let label = if rng.gen::<f64>() < settings.label_drop { Label::Null } else { ex.label };
            Ok(CorruptionDraw { t, x_t, label })
        })
        .collect()
}

/// Batch-mean weighted masked cross-entropy and its exact gradient.
pub fn loss_on_draws(
    model: &LinearSoftmaxDenoiser,
    batch: &[LabeledExample],
    draws: &[CorruptionDraw],
    kind: LossKind,
    sched: NoiseSchedule,
) -> Result<LossReport> {
    if batch.len() != draws.len() || batch.is_empty() {
        return Err(contract("batch and draws must be non-empty and of equal length"));
    }
    let shape = model.shape();
    let d = shape.spec.d();
    let scale = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; model.params().len()];
    let mut loss = 0.0;
    let mut masked_count = 0;
    let mut g = vec![0.0; d];
    for (ex, draw) in batch.iter().zip(draws) {
        if draw.x_t.len() != shape.len || !draw.x_t.conforms_to(shape.spec) {
            return Err(contract("corrupted sequence does not match the model shape"));
        }
        let weight = kind.weight(draw.t, sched)?;
        let row = draw.label.row(shape.classes)?;
        let flat = draw.x_t.to_flat(shape.spec);
        let logits = model.logits_flat(&flat, draw.t, row);
        let mut example_loss = 0.0;
        for (i, tok) in draw.x_t.tokens().iter().enumerate() {
            if !tok.is_mask() {
                continue;
            }
            masked_count += 1;
            let target = ex.x0.tokens()[i].valid_index().expect("clean example");
            let lrow = logits.position(i);
            let lse = log_sum_exp(lrow);
            example_loss += lse - lrow[target];
            let gscale = weight * scale;
            for (gv, l) in g.iter_mut().zip(lrow) {
                *gv = gscale * (l - lse).exp();
            }
            g[target] -= gscale;
            model.accumulate_grad(&mut grad, &flat, draw.t, row, i, &g);
        }
        loss += weight * example_loss;
    }
    Ok(LossReport { loss: loss * scale, grad, masked_count })
}

fn sampled_loss<R: Rng + ?Sized>(
    model: &LinearSoftmaxDenoiser,
    batch: &[LabeledExample],
    kind: LossKind,
    sched: NoiseSchedule,
    settings: &CorruptionSettings,
    rng: &mut R,
) -> Result<LossReport> {
    let draws = draw_corruptions(batch, sched, model.shape().spec, settings, rng)?;
    loss_on_draws(model, batch, &draws, kind, sched)
}

/// Monte Carlo estimate of the `1/t`-weighted masked cross-entropy.
pub fn ddm_linear_loss<R: Rng + ?Sized>(
    model: &LinearSoftmaxDenoiser,
    batch: &[LabeledExample],
    sched: NoiseSchedule,
    settings: &CorruptionSettings,
    rng: &mut R,
) -> Result<LossReport> {
    sampled_loss(model, batch, LossKind::DdmLinear, sched, settings, rng)
}

/// Same estimate with the schedule-derived weight `-α'_t / (1 - α_t)`.
pub fn ddm_general_loss<R: Rng + ?Sized>(
    model: &LinearSoftmaxDenoiser,
    batch: &[LabeledExample],
    sched: NoiseSchedule,
    settings: &CorruptionSettings,
    rng: &mut R,
) -> Result<LossReport> {
    sampled_loss(model, batch, LossKind::DdmGeneral, sched, settings, rng)
}

/// Unweighted masked cross-entropy.
pub fn mvtm_loss<R: Rng + ?Sized>(
    model: &LinearSoftmaxDenoiser,
    batch: &[LabeledExample],
    sched: NoiseSchedule,
    settings: &CorruptionSettings,
    rng: &mut R,
) -> Result<LossReport> {
    sampled_loss(model, batch, LossKind::Mvtm, sched, settings, rng)
}

/// Compares the analytic gradient with central differences (`h = 1e-5`) on
/// up to 200 randomly chosen parameters, holding the corruption draws fixed.
/// Returns `max |a - n| / max(|a|, |n|, 1e-6)`; the floor keeps round-off on
/// vanishing gradients from reading as a large relative error.
pub fn grad_check<R: Rng + ?Sized>(
    model: &LinearSoftmaxDenoiser,
    batch: &[LabeledExample],
    draws: &[CorruptionDraw],
    kind: LossKind,
    sched: NoiseSchedule,
    rng: &mut R,
) -> Result<f64> {
    const H: f64 = 1e-5;
    const GRAD_FLOOR: f64 = 1e-6;
    let analytic = loss_on_draws(model, batch, draws, kind, sched)?.grad;
    let n = model.params().len();
    let picks = rand::seq::index::sample(rng, n, n.min(200));
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for idx in picks.iter() {
        let base = probe.params()[idx];
        probe.params_mut()[idx] = base + H;
        let up = loss_on_draws(&probe, batch, draws, kind, sched)?.loss;
        probe.params_mut()[idx] = base - H;
        let down = loss_on_draws(&probe, batch, draws, kind, sched)?.loss;
        probe.params_mut()[idx] = base;
        let numeric = (up - down) / (2.0 * H);
        let scale = analytic[idx].abs().max(numeric.abs()).max(GRAD_FLOOR);
        worst = worst.max((analytic[idx] - numeric).abs() / scale);
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: usize,
    /// Mean batch loss over the steps since the previous row.
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: LinearSoftmaxDenoiser,
    /// Snapshot at the logged row with the lowest mean loss.
    pub best: LinearSoftmaxDenoiser,
    pub log: Vec<LogRow>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> Option<f64> {
        self.log.last().map(|r| r.loss)
    }
}

struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    first: Vec<f64>,
    second: Vec<f64>,
    step: i32,
}

impl Optimizer {
    fn new(cfg: &TrainConfig, n: usize) -> Self {
        Self {
            kind: cfg.optimizer,
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.epsilon,
            first: vec![0.0; n],
            second: vec![0.0; n],
            step: 0,
        }
    }

    fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                self.step += 1;
                let c1 = 1.0 - self.beta1.powi(self.step);
                let c2 = 1.0 - self.beta2.powi(self.step);
                for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.first).zip(&mut self.second) {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
                }
            }
        }
    }
}

/// Trains a zero-initialised [`LinearSoftmaxDenoiser`] on `dataset`.
///
/// Batches are drawn from the dataset weights. Step `k` uses generator
/// stream `k` of `config.seed`, so a run is reproducible bit for bit.
pub fn train(config: &TrainConfig, dataset: &ToyDataset, sched: NoiseSchedule) -> Result<TrainOutcome> {
    config.corruption.validate()?;
    if config.batch_size == 0 {
        return Err(contract("batch size must be at least 1"));
    }
    let shape = LinearShape {
        spec: dataset.spec(),
        len: dataset.seq_len(),
        classes: dataset.num_classes(),
        time_channel: config.time_channel,
    };
    let mut model = LinearSoftmaxDenoiser::zeros(shape);
    let mut best = model.clone();
    let mut log = Vec::new();
    if config.steps == 0 {
        return Ok(TrainOutcome { model, best, log });
    }
    let weights: Vec<f64> = dataset.examples().iter().map(|e| e.weight).collect();
    let picker = WeightedIndex::new(&weights).map_err(|e| contract(format!("dataset weights: {e}")))?;
    let mut opt = Optimizer::new(config, model.params().len());
    let log_every = config.log_every.max(1);
    let mut window = 0.0;
    let mut window_len = 0;
    let mut best_loss = f64::INFINITY;
    // Seed for the stream family; mixing keeps it apart from sampler seeds.
    let family = seeded(config.seed).gen::<u64>();
    for step in 1..=config.steps {
        let mut rng = stream(family, step as u64);
        let batch: Vec<LabeledExample> = (0..config.batch_size)
            .map(|_| dataset.examples()[picker.sample(&mut rng)].clone())
            .collect();
        let report = sampled_loss(&model, &batch, config.loss, sched, &config.corruption, &mut rng)?;
        if !report.loss.is_finite() {
            return Err(Error::Diverged { step, loss: report.loss });
        }
        opt.apply(model.params_mut(), &report.grad);
        if model.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged { step, loss: f64::NAN });
        }
        window += report.loss;
        window_len += 1;
        if step % log_every == 0 || step == config.steps {
            let mean = window / window_len as f64;
            log::debug!("step {step}: loss {mean:.6}");
            log.push(LogRow { step, loss: mean });
            if mean < best_loss {
                best_loss = mean;
                best = model.clone();
            }
            window = 0.0;
            window_len = 0;
        }
    }
    Ok(TrainOutcome { model, best, log })
}

/// Metrics log as CSV with a `step,loss` header.
pub fn log_to_csv(log: &[LogRow]) -> String {
    let mut out = String::from("step,loss\n");
    for row in log {
        out.push_str(&format!("{},{}\n", row.step, row.loss));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_grid_patterns;
    use crate::vocab::{Token, VocabSpec};

    const LIN: NoiseSchedule = NoiseSchedule::Linear;

    fn one_position_setup(p_correct_logit: f64) -> (LinearSoftmaxDenoiser, Vec<LabeledExample>) {
        let spec = VocabSpec::new(2, 1).unwrap();
        let shape = LinearShape { spec, len: 1, classes: 1, time_channel: false };
        let mut model = LinearSoftmaxDenoiser::zeros(shape);
        let off = model.bias_offset(0);
        model.params_mut()[off] = p_correct_logit;
        let ex = LabeledExample::new(Sequence::from_valid_codes(&[0], spec).unwrap(), Label::Class(0), 1.0).unwrap();
        (model, vec![ex])
    }

    fn masked_draw(t: f64) -> CorruptionDraw {
        let spec = VocabSpec::new(2, 1).unwrap();
        CorruptionDraw { t, x_t: Sequence::new(vec![Token::Mask(1)], spec).unwrap(), label: Label::Class(0) }
    }

    #[test]
    fn single_masked_position_values() {
        // p(correct) = 4 / (4 + 1) = 0.8
        let (model, batch) = one_position_setup(4.0f64.ln());
        let ddm = loss_on_draws(&model, &batch, &[masked_draw(0.5)], LossKind::DdmLinear, LIN).unwrap();
        assert!((ddm.loss - 2.0 * -(0.8f64.ln())).abs() < 1e-12);
        assert!((ddm.loss - 0.4463).abs() < 1e-4);
        assert_eq!(ddm.masked_count, 1);
        let mvtm = loss_on_draws(&model, &batch, &[masked_draw(0.37)], LossKind::Mvtm, LIN).unwrap();
        assert!((mvtm.loss - 0.2231).abs() < 1e-4);
    }

    #[test]
    fn uniform_model_at_full_noise_costs_ln2() {
        let (model, batch) = one_position_setup(0.0);
        let r = loss_on_draws(&model, &batch, &[masked_draw(1.0)], LossKind::DdmLinear, LIN).unwrap();
        assert!((r.loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn clean_input_contributes_nothing() {
        let (model, batch) = one_position_setup(0.3);
        let clean = CorruptionDraw { x_t: batch[0].x0.clone(), ..masked_draw(0.4) };
        for kind in [LossKind::DdmLinear, LossKind::DdmGeneral, LossKind::Mvtm] {
            let r = loss_on_draws(&model, &batch, &[clean.clone()], kind, LIN).unwrap();
            assert_eq!(r.loss, 0.0);
            assert_eq!(r.masked_count, 0);
            assert!(r.grad.iter().all(|g| *g == 0.0));
        }
    }

    #[test]
    fn weighted_to_unweighted_ratio_is_inverse_time() {
        let (model, batch) = one_position_setup(0.7);
        for t in [0.2, 0.5, 0.8] {
            let ddm = loss_on_draws(&model, &batch, &[masked_draw(t)], LossKind::DdmLinear, LIN).unwrap();
            let mvtm = loss_on_draws(&model, &batch, &[masked_draw(t)], LossKind::Mvtm, LIN).unwrap();
            assert!((ddm.loss / mvtm.loss - 1.0 / t).abs() < 1e-12);
        }
    }

    fn grid() -> ToyDataset {
        generate_grid_patterns(2, 2, 2, 2, usize::MAX, &mut seeded(0)).unwrap()
    }

    #[test]
    fn general_and_linear_losses_agree_bitwise() {
        let ds = grid();
        let model = LinearSoftmaxDenoiser::zeros(LinearShape {
            spec: ds.spec(),
            len: 4,
            classes: 2,
            time_channel: false,
        });
        let settings = CorruptionSettings::default();
        let a = ddm_linear_loss(&model, ds.examples(), LIN, &settings, &mut seeded(4)).unwrap();
        let b = ddm_general_loss(&model, ds.examples(), LIN, &settings, &mut seeded(4)).unwrap();
        assert_eq!(a.loss.to_bits(), b.loss.to_bits());
        assert_eq!(a.grad, b.grad);
    }

    #[test]
    fn zero_steps_returns_zero_model() {
        let ds = grid();
        let out = train(&TrainConfig { steps: 0, ..Default::default() }, &ds, LIN).unwrap();
        assert!(out.model.params().iter().all(|p| *p == 0.0));
        assert!(out.log.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let ds = grid();
        let cfg = TrainConfig { steps: 50, batch_size: 8, seed: 3, log_every: 10, ..Default::default() };
        let a = train(&cfg, &ds, LIN).unwrap();
        let b = train(&cfg, &ds, LIN).unwrap();
        assert_eq!(a.model.to_bytes(), b.model.to_bytes());
        assert_eq!(a.log, b.log);
        assert_eq!(a.log.len(), 5);
    }

    #[test]
    fn sgd_also_reduces_loss() {
        let ds = grid();
        let cfg = TrainConfig {
            steps: 400,
            batch_size: 16,
            optimizer: OptimizerKind::Sgd,
            learning_rate: 0.05,
            loss: LossKind::Mvtm,
            log_every: 100,
            ..Default::default()
        };
        let out = train(&cfg, &ds, LIN).unwrap();
        assert!(out.log.last().unwrap().loss < out.log[0].loss);
    }

    #[test]
    fn rejects_bad_settings() {
        let ds = grid();
        let mut cfg = TrainConfig { steps: 1, ..Default::default() };
        cfg.corruption.t_min = 0.0;
        assert!(train(&cfg, &ds, LIN).is_err());
        cfg.corruption.t_min = 1e-3;
        cfg.corruption.label_drop = 1.5;
        assert!(train(&cfg, &ds, LIN).is_err());
    }

    #[test]
    fn huge_learning_rate_is_reported_as_divergence() {
        let ds = grid();
        let cfg = TrainConfig {
            steps: 200,
            batch_size: 8,
            optimizer: OptimizerKind::Sgd,
            learning_rate: f64::MAX,
            ..Default::default()
        };
        assert!(matches!(train(&cfg, &ds, LIN), Err(Error::Diverged { .. })));
    }
}
