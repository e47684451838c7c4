//! Reverse-process samplers.
//!
//! All samplers share one driver: a run starts from uniformly drawn mask
//! indices (or a partially fixed sequence for inpainting), walks the reverse
//! timeline and applies one step kind per interval. Runs are pure functions
//! of `(RunSeed, SampleConfig, sampler, denoiser)`.

pub mod cfg;
pub mod dfm;
pub mod mvtm;
pub mod rehash;

use std::collections::BTreeSet;
use std::fmt;

use rand::distributions::Open01;
use rand::Rng;
use rayon::prelude::*;

pub use cfg::{cfg_combine, guided_logits, guided_probs, CfgConfig, CfgMode, GuidanceSpace};
pub use dfm::dfm_step;
pub use mvtm::{mvtm_step, remask_count};
pub use rehash::rehash_step;

use crate::denoiser::Denoiser;
use crate::error::{contract, Result};
use crate::rng::{seeded, stream};
use crate::schedule::{timeline_points, NoiseSchedule, Timeline, TimelineKind};
use crate::vocab::{Label, Sequence, Token, VocabSpec};

/// Draw from unnormalised non-negative weights by inverse CDF.
pub fn categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    let mut last = None;
    for (k, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            if u < w {
                return k;
            }
            u -= w;
            last = Some(k);
        }
    }
    // Rounding can leave u just above the final positive weight.
    last.expect("categorical draw needs a positive weight")
}

/// Standard Gumbel variate.
pub fn gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.sample(Open01);
    -(-u.ln()).ln()
}

/// `argmax_v(logits[v] + g_v)` with fresh Gumbel noise; ties go to the lower index.
pub fn gumbel_argmax<R: Rng + ?Sized>(logits: &[f64], rng: &mut R) -> usize {
    let mut best = (f64::NEG_INFINITY, 0);
    for (v, l) in logits.iter().enumerate() {
        let score = l + gumbel(rng);
        if score > best.0 {
            best = (score, v);
        }
    }
    best.1
}

/// Gumbel intensity `G(t) = g0 · t` for the MVTM sampler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GumbelConfig {
    pub g0: f64,
}

impl Default for GumbelConfig {
    fn default() -> Self {
        Self { g0: 1.0 }
    }
}

impl GumbelConfig {
    pub fn intensity(&self, t: f64) -> f64 {
        self.g0 * t
    }

    pub fn validate(&self) -> Result<()> {
        if self.g0 >= 0.0 && self.g0.is_finite() {
            Ok(())
        } else {
            Err(contract(format!("Gumbel intensity must be >= 0, got {}", self.g0)))
        }
    }
}

/// `count` base intensities drawn uniformly from `[0.5, 4.0]`.
pub fn gumbel_family(seed: u64, count: usize) -> Vec<GumbelConfig> {
    let mut rng = seeded(seed);
    (0..count).map(|_| GumbelConfig { g0: rng.gen_range(0.5..=4.0) }).collect()
}

/// Cap on the number of positions a rehash step may decode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DecodeLimit {
    #[default]
    Unbounded,
    /// At most one newly decoded position per step, except the final step
    /// which decodes everything left. This is any-order autoregressive
    /// decoding.
    AtMostOne,
}

/// Guidance strength and interpolation space for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Guidance {
    pub w: f64,
    pub space: GuidanceSpace,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Sampler {
    Rehash,
    Mvtm(GumbelConfig),
    Dfm,
    /// Rehash steps, except the listed 1-based steps which run DFM updates.
    Hybrid(BTreeSet<usize>),
}

impl Sampler {
    pub fn kind(&self) -> SamplerKind {
        match self {
            Sampler::Rehash => SamplerKind::Rehash,
            Sampler::Mvtm(_) => SamplerKind::Mvtm,
            Sampler::Dfm => SamplerKind::Dfm,
            Sampler::Hybrid(_) => SamplerKind::Hybrid,
        }
    }

    /// Hybrid sampler refining at the middle and final steps.
    pub fn default_hybrid(steps: usize) -> Self {
        Sampler::Hybrid([steps.div_ceil(2), steps].into_iter().collect())
    }
}

impl fmt::Display for Sampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sampler::Mvtm(g) => write!(f, "mvtm(g0={})", g.g0),
            Sampler::Hybrid(steps) => {
                let list: Vec<String> = steps.iter().map(usize::to_string).collect();
                write!(f, "hybrid({})", list.join(" "))
            }
            other => write!(f, "{}", other.kind()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SamplerKind {
    Rehash,
    Mvtm,
    Dfm,
    Hybrid,
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplerKind::Rehash => "rehash",
            SamplerKind::Mvtm => "mvtm",
            SamplerKind::Dfm => "dfm",
            SamplerKind::Hybrid => "hybrid",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleConfig {
    pub steps: usize,
    pub timeline: TimelineKind,
    pub cfg: CfgConfig,
    pub decode_limit: DecodeLimit,
    pub keep_trajectory: bool,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            steps: 8,
            timeline: TimelineKind::Linear,
            cfg: CfgConfig::default(),
            decode_limit: DecodeLimit::Unbounded,
            keep_trajectory: false,
        }
    }
}

/// Identifies a run: generator stream `index` of `master`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSeed {
    pub master: u64,
    pub index: u64,
}

impl RunSeed {
    pub fn new(master: u64, index: u64) -> Self {
        Self { master, index }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRun {
    pub seed: RunSeed,
    pub timeline: Timeline,
    pub sampler: SamplerKind,
    pub label: Label,
    /// States after each step, when requested; `trajectory[0]` is the start.
    pub trajectory: Vec<Sequence>,
    pub output: Sequence,
}

fn random_masks<R: Rng + ?Sized>(len: usize, spec: VocabSpec, rng: &mut R) -> Sequence {
    Sequence::from_tokens_unchecked((0..len).map(|_| Token::Mask(rng.gen_range(1..=spec.m()))).collect())
}

fn drive<D: Denoiser + ?Sized>(
    sampler: &Sampler,
    config: &SampleConfig,
    den: &D,
    label: Label,
    sched: NoiseSchedule,
    seed: RunSeed,
    start: Option<&Sequence>,
) -> Result<SampleRun> {
    config.cfg.validate()?;
    if let Sampler::Mvtm(g) = sampler {
        g.validate()?;
    }
    if let Sampler::Hybrid(steps) = sampler {
        if steps.iter().any(|&k| k == 0 || k > config.steps) {
            return Err(contract(format!("hybrid DFM steps must lie in 1..={}", config.steps)));
        }
    }
    let spec = den.spec();
    let len = den.seq_len();
    label.row(den.num_classes())?;
    let timeline = timeline_points(config.steps, config.timeline)?;
    let mut rng = stream(seed.master, seed.index);

    let (mut x, fixed) = match start {
        None => (random_masks(len, spec, &mut rng), vec![false; len]),
        Some(partial) => {
            if partial.len() != len || !partial.conforms_to(spec) {
                return Err(contract("inpainting input does not match the denoiser shape"));
            }
            let mut x = partial.clone();
            for tok in x.tokens_mut() {
                if tok.is_mask() {
                    *tok = Token::Mask(rng.gen_range(1..=spec.m()));
                }
            }
            let fixed = partial.tokens().iter().map(Token::is_valid).collect();
            (x, fixed)
        }
    };
    let generated = fixed.iter().filter(|f| !**f).count();
    let mut trajectory = Vec::new();
    if config.keep_trajectory {
        trajectory.push(x.clone());
    }

    let steps = timeline.steps();
    for (k, (t, s)) in timeline.intervals().enumerate() {
        let step = k + 1;
        let guidance = Guidance { w: config.cfg.weight_at(step, steps), space: config.cfg.space };
        let use_dfm = match sampler {
            Sampler::Dfm => true,
            Sampler::Hybrid(set) => set.contains(&step),
            _ => false,
        };
        x = if use_dfm {
            let mut next = dfm_step(&x, t, s, den, label, guidance, sched, &mut rng)?;
            for (i, _) in fixed.iter().enumerate().filter(|(_, f)| **f) {
                next.tokens_mut()[i] = x.tokens()[i];
            }
            next
        } else if let Sampler::Mvtm(g) = sampler {
            mvtm_step(&x, t, s, den, label, guidance, *g, generated, sched, &mut rng)?
        } else {
            rehash_step(&x, t, s, den, label, guidance, sched, config.decode_limit, &mut rng)?
        };
        if config.keep_trajectory {
            trajectory.push(x.clone());
        }
    }
    debug_assert!(x.is_clean(), "final state must be fully decoded");
    Ok(SampleRun { seed, timeline, sampler: sampler.kind(), label, trajectory, output: x })
}

pub fn sample<D: Denoiser + ?Sized>(
    sampler: &Sampler,
    config: &SampleConfig,
    den: &D,
    label: Label,
    sched: NoiseSchedule,
    seed: RunSeed,
) -> Result<SampleRun> {
    drive(sampler, config, den, label, sched, seed, None)
}

pub fn sample_rehash<D: Denoiser + ?Sized>(
    config: &SampleConfig,
    den: &D,
    label: Label,
    sched: NoiseSchedule,
    seed: RunSeed,
) -> Result<SampleRun> {
    sample(&Sampler::Rehash, config, den, label, sched, seed)
}

pub fn sample_mvtm<D: Denoiser + ?Sized>(
    config: &SampleConfig,
    gumbel: GumbelConfig,
    den: &D,
    label: Label,
    sched: NoiseSchedule,
    seed: RunSeed,
) -> Result<SampleRun> {
    sample(&Sampler::Mvtm(gumbel), config, den, label, sched, seed)
}

pub fn sample_dfm<D: Denoiser + ?Sized>(
    config: &SampleConfig,
    den: &D,
    label: Label,
    sched: NoiseSchedule,
    seed: RunSeed,
) -> Result<SampleRun> {
    sample(&Sampler::Dfm, config, den, label, sched, seed)
}

pub fn sample_hybrid<D: Denoiser + ?Sized>(
    config: &SampleConfig,
    dfm_steps: &BTreeSet<usize>,
    den: &D,
    label: Label,
    sched: NoiseSchedule,
    seed: RunSeed,
) -> Result<SampleRun> {
    sample(&Sampler::Hybrid(dfm_steps.clone()), config, den, label, sched, seed)
}

/// Generate the masked positions of `partial`; valid positions are kept.
pub fn sample_inpaint<D: Denoiser + ?Sized>(
    partial: &Sequence,
    sampler: &Sampler,
    config: &SampleConfig,
    den: &D,
    label: Label,
    sched: NoiseSchedule,
    seed: RunSeed,
) -> Result<SampleRun> {
    drive(sampler, config, den, label, sched, seed, Some(partial))
}

/// `count` independent runs on streams `0..count` of `master`, in stream order.
pub fn sample_many<D: Denoiser + ?Sized>(
    sampler: &Sampler,
    config: &SampleConfig,
    den: &D,
    label: Label,
    sched: NoiseSchedule,
    master: u64,
    count: usize,
) -> Result<Vec<SampleRun>> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| sample(sampler, config, den, label, sched, RunSeed::new(master, i)))
        .collect()
}

/// Like [`sample_many`] but for inpainting a shared partial sequence.
#[allow(clippy::too_many_arguments)]
pub fn inpaint_many<D: Denoiser + ?Sized>(
    partial: &Sequence,
    sampler: &Sampler,
    config: &SampleConfig,
    den: &D,
    label: Label,
    sched: NoiseSchedule,
    master: u64,
    count: usize,
) -> Result<Vec<SampleRun>> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| sample_inpaint(partial, sampler, config, den, label, sched, RunSeed::new(master, i)))
        .collect()
}
