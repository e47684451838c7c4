//! Subcommand implementations. All file writes happen here, after the
//! (possibly parallel) computation has finished.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use rehash_diffusion::dataset::{generate_grid_patterns, generate_markov, MarkovChain};
use rehash_diffusion::denoiser::{Denoiser, ExactPosteriorDenoiser, LinearSoftmaxDenoiser};
use rehash_diffusion::eval::{
    capacity_sweep, sampler_bench, sweep_to_csv, tv_distance, BenchSettings, EmpiricalDistribution,
};
use rehash_diffusion::rng::seeded;
use rehash_diffusion::samplers::{
    gumbel_family, inpaint_many, sample_many, CfgConfig, DecodeLimit, GuidanceSpace, GumbelConfig, SampleConfig,
    Sampler,
};
use rehash_diffusion::schedule::{NoiseSchedule, TimelineKind};
use rehash_diffusion::training::{log_to_csv, train, CorruptionSettings, LossKind, OptimizerKind, TrainConfig};
use rehash_diffusion::{Label, Sequence, ToyDataset, VocabSpec};
use serde::Serialize;

use crate::export::{export_grid, grid_side};
use crate::manifest::{FileDigest, RunManifest};
use crate::*;

const SCHED: NoiseSchedule = NoiseSchedule::Linear;

/// What the manifest needs beyond the parsed arguments.
#[derive(Debug, Clone, Default)]
pub struct Context {
    /// Arguments after merging the config file.
    pub argv: Vec<String>,
}

pub fn dispatch(command: &Command, ctx: &Context) -> Result<i32> {
    match command {
        Command::GenData(a) => gen_data(a, ctx),
        Command::Train(a) => train_cmd(a, ctx),
        Command::Sample(a) => sample_cmd(a, ctx),
        Command::Eval(a) => eval_cmd(a, ctx),
        Command::Bench(a) => bench_cmd(a, ctx),
        Command::Sweep(a) => sweep_cmd(a, ctx),
        Command::KernelCheck(a) => kernel_check_cmd(a, ctx),
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn finish<A: Serialize>(
    ctx: &Context,
    args: &A,
    seed: Option<u64>,
    inputs: &[&Path],
    outputs: &[PathBuf],
) -> Result<i32> {
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        argv: ctx.argv.clone(),
        config: serde_json::to_value(args)?,
        seed,
        inputs: inputs.iter().map(|p| FileDigest::of(p)).collect::<Result<_>>()?,
        outputs: outputs.iter().map(|p| FileDigest::of(p)).collect::<Result<_>>()?,
    };
    let path = manifest.write(&outputs[0])?;
    log::info!("manifest written to {}", path.display());
    Ok(EXIT_OK)
}

fn parse_label(text: &str) -> Result<Label> {
    text.parse::<Label>().map_err(|e| usage(format!("invalid label {text:?}: {e}")))
}

fn parse_probs(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| usage(format!("invalid probability {v:?}: {e}"))))
        .collect()
}

fn timeline(arg: TimelineArg) -> TimelineKind {
    match arg {
        TimelineArg::Linear => TimelineKind::Linear,
        TimelineArg::Arccos => TimelineKind::Arccos,
        TimelineArg::Square => TimelineKind::Square,
        TimelineArg::Cosine => TimelineKind::Cosine,
    }
}

fn sample_config(steps: usize, g: &GuidanceArgs) -> Result<SampleConfig> {
    let mut cfg = match (g.cfg_lo, g.cfg_hi) {
        (Some(lo), Some(hi)) => CfgConfig::linear(lo, hi),
        _ => CfgConfig::constant(g.cfg),
    };
    cfg.space = match g.cfg_space {
        SpaceArg::Logit => GuidanceSpace::Logit,
        SpaceArg::Probability => GuidanceSpace::Probability,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    if steps == 0 {
        return Err(usage("--steps must be at least 1"));
    }
    Ok(SampleConfig {
        steps,
        timeline: timeline(g.timeline),
        cfg,
        decode_limit: match g.decode_limit {
            DecodeLimitArg::Unbounded => DecodeLimit::Unbounded,
            DecodeLimitArg::One => DecodeLimit::AtMostOne,
        },
        keep_trajectory: false,
    })
}

fn sampler(kind: SamplerArg, g0: f64, steps: usize, dfm_steps: Option<&[usize]>) -> Result<Sampler> {
    Ok(match kind {
        SamplerArg::Rehash => Sampler::Rehash,
        SamplerArg::Mvtm => {
            let g = GumbelConfig { g0 };
            g.validate().map_err(|e| usage(e.to_string()))?;
            Sampler::Mvtm(g)
        }
        SamplerArg::Dfm => Sampler::Dfm,
        SamplerArg::Hybrid => match dfm_steps {
            None => Sampler::default_hybrid(steps),
            Some(list) => {
                if let Some(bad) = list.iter().find(|&&k| k == 0 || k > steps) {
                    return Err(usage(format!("--dfm-steps entry {bad} outside 1..={steps}")));
                }
                Sampler::Hybrid(list.iter().copied().collect::<BTreeSet<_>>())
            }
        },
    })
}

fn train_config(t: &TrainingArgs) -> TrainConfig {
    TrainConfig {
        steps: t.train_steps,
        batch_size: t.batch_size,
        learning_rate: t.lr,
        optimizer: match t.optimizer {
            OptimizerArg::Sgd => OptimizerKind::Sgd,
            OptimizerArg::Adam => OptimizerKind::Adam,
        },
        corruption: CorruptionSettings { t_min: t.t_min, label_drop: t.label_drop },
        loss: match t.loss {
            LossArg::DdmLinear => LossKind::DdmLinear,
            LossArg::DdmGeneral => LossKind::DdmGeneral,
            LossArg::Mvtm => LossKind::Mvtm,
        },
        seed: t.train_seed,
        log_every: t.log_every,
        time_channel: t.time_channel,
        ..TrainConfig::default()
    }
}

fn load_dataset(path: &Path) -> Result<ToyDataset> {
    ToyDataset::load(path).with_context(|| format!("loading dataset {}", path.display()))
}

/// The selected denoiser plus the dataset, when one was given.
fn load_denoiser(args: &DenoiserArgs) -> Result<(Box<dyn Denoiser>, Option<ToyDataset>, Vec<PathBuf>)> {
    let dataset = args.dataset.as_deref().map(load_dataset).transpose()?;
    let mut inputs: Vec<PathBuf> = args.dataset.iter().cloned().collect();
    let den: Box<dyn Denoiser> = match args.denoiser {
        DenoiserArg::Exact => {
            if args.model.is_some() {
                return Err(usage("--model applies to --denoiser linear only"));
            }
            let ds = dataset.clone().ok_or_else(|| usage("--denoiser exact needs --dataset"))?;
            Box::new(ExactPosteriorDenoiser::new(ds, SCHED))
        }
        DenoiserArg::Linear => {
            let path = args.model.as_ref().ok_or_else(|| usage("--denoiser linear needs --model"))?;
            let model = LinearSoftmaxDenoiser::load(path)
                .with_context(|| format!("loading model {}", path.display()))?;
            if let Some(ds) = &dataset {
                if model.spec() != ds.spec() || model.seq_len() != ds.seq_len() {
                    bail!(
                        "model shape (d={}, m={}, L={}) does not match the dataset (d={}, m={}, L={})",
                        model.spec().d(),
                        model.spec().m(),
                        model.seq_len(),
                        ds.spec().d(),
                        ds.spec().m(),
                        ds.seq_len()
                    );
                }
            }
            inputs.push(path.clone());
            Box::new(model)
        }
    };
    Ok((den, dataset, inputs))
}

fn gen_data(a: &GenDataArgs, ctx: &Context) -> Result<i32> {
    let mut rng = seeded(a.seed);
    let ds = match a.kind {
        DataKind::Grid => generate_grid_patterns(a.side, a.d, a.classes, a.m, a.max_per_class, &mut rng)?,
        DataKind::Markov => {
            let mut chain = MarkovChain::uniform(a.d);
            if let Some(rows) = &a.transitions {
                chain.rows = rows.split(';').map(parse_probs).collect::<Result<_>>()?;
            }
            if let Some(init) = &a.initial {
                chain.initial = parse_probs(init)?;
            }
            generate_markov(a.len, &chain, a.m, a.samples, &mut rng)?
        }
    };
    write_file(&a.out, ds.to_text())?;
    println!("wrote {} examples to {}", ds.examples().len(), a.out.display());
    finish(ctx, a, Some(a.seed), &[], &[a.out.clone()])
}

fn train_cmd(a: &TrainArgs, ctx: &Context) -> Result<i32> {
    let ds = load_dataset(&a.dataset)?;
    let outcome = train(&train_config(&a.training), &ds, SCHED)?;
    let model = match a.keep {
        KeepArg::Final => &outcome.model,
        KeepArg::Best => &outcome.best,
    };
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut p = a.out.as_os_str().to_owned();
        p.push(".log.csv");
        p.into()
    });
    write_file(&a.out, model.to_bytes())?;
    write_file(&log_path, log_to_csv(&outcome.log))?;
    match outcome.final_loss() {
        Some(loss) => println!("trained {} steps, final loss {loss:.6}", a.training.train_steps),
        None => println!("no training steps run"),
    }
    finish(ctx, a, Some(a.training.train_seed), &[&a.dataset], &[a.out.clone(), log_path])
}

fn samples_to_csv(seqs: &[Sequence], spec: VocabSpec) -> String {
    let len = seqs.first().map_or(0, Sequence::len);
    let mut out: String = (0..len).map(|i| format!("p{i}")).collect::<Vec<_>>().join(",");
    out.push('\n');
    for s in seqs {
        let row: Vec<String> = s.to_flat(spec).iter().map(usize::to_string).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn samples_from_csv(text: &str, spec: VocabSpec) -> Result<Vec<Sequence>> {
    let mut lines = text.lines();
    lines.next().context("sample file is empty")?;
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let flat = line
                .split(',')
                .map(|v| v.trim().parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .with_context(|| format!("sample line {}", n + 2))?;
            Sequence::from_flat(&flat, spec).with_context(|| format!("sample line {}", n + 2))
        })
        .collect()
}

fn read_inpaint(path: &Path, spec: VocabSpec) -> Result<Sequence> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let line = text.lines().find(|l| !l.trim().is_empty()).context("inpainting file is empty")?;
    let flat = line
        .split(',')
        .map(|v| v.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .with_context(|| format!("parsing {}", path.display()))?;
    Ok(Sequence::from_flat(&flat, spec)?)
}

fn sample_cmd(a: &SampleArgs, ctx: &Context) -> Result<i32> {
    let (den, _, mut inputs) = load_denoiser(&a.denoiser)?;
    let label = parse_label(&a.label)?;
    let config = sample_config(a.steps, &a.guidance)?;
    let sampler = sampler(a.sampler, a.g0, a.steps, a.dfm_steps.as_deref())?;
    let spec = den.spec();
    let runs = match &a.inpaint {
        Some(path) => {
            let partial = read_inpaint(path, spec)?;
            inputs.push(path.clone());
            inpaint_many(&partial, &sampler, &config, den.as_ref(), label, SCHED, a.seed, a.num_samples)?
        }
        None => sample_many(&sampler, &config, den.as_ref(), label, SCHED, a.seed, a.num_samples)?,
    };
    let outputs_seq: Vec<Sequence> = runs.into_iter().map(|r| r.output).collect();
    write_file(&a.out, samples_to_csv(&outputs_seq, spec))?;
    let mut outputs = vec![a.out.clone()];
    if let Some(grid) = &a.grid {
        let side = grid_side(den.seq_len())?;
        let tiles = &outputs_seq[..a.grid_tiles.min(outputs_seq.len())];
        export_grid(tiles, spec, side, grid).with_context(|| format!("writing {}", grid.display()))?;
        outputs.push(grid.clone());
    }
    let emp = EmpiricalDistribution::from_sequences(&outputs_seq, spec);
    println!("{} samples, {} distinct, entropy {:.4} nats", emp.total(), emp.distinct(), emp.entropy());
    let input_refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    finish(ctx, a, Some(a.seed), &input_refs, &outputs)
}

fn eval_cmd(a: &EvalArgs, ctx: &Context) -> Result<i32> {
    let ds = load_dataset(&a.dataset)?;
    let label = parse_label(&a.label)?;
    let text = std::fs::read_to_string(&a.samples).with_context(|| format!("reading {}", a.samples.display()))?;
    let seqs = samples_from_csv(&text, ds.spec())?;
    if let Some(bad) = seqs.iter().find(|s| s.len() != ds.seq_len()) {
        bail!("sample of length {} does not match dataset length {}", bad.len(), ds.seq_len());
    }
    let emp = EmpiricalDistribution::from_sequences(&seqs, ds.spec());
    let tv = tv_distance(&emp.probabilities(), &ds.distribution(label)?);
    let csv = format!(
        "label,n,tv,entropy,distinct\n{label},{},{tv:.6},{:.6},{}\n",
        emp.total(),
        emp.entropy(),
        emp.distinct()
    );
    write_file(&a.out, &csv)?;
    print!("{csv}");
    finish(ctx, a, None, &[&a.dataset, &a.samples], &[a.out.clone()])
}

fn bench_labels(text: &str, classes: usize) -> Result<Vec<Label>> {
    if text == "all" {
        return Ok((0..classes).map(Label::Class).collect());
    }
    text.split(',').map(|l| parse_label(l.trim())).collect()
}

fn bench_cmd(a: &BenchArgs, ctx: &Context) -> Result<i32> {
    let (den, dataset, inputs) = load_denoiser(&a.denoiser)?;
    let ds = dataset.ok_or_else(|| usage("bench needs --dataset for the reference distribution"))?;
    let labels = bench_labels(&a.labels, ds.num_classes())?;
    let g0s: Vec<GumbelConfig> = if a.g0.is_empty() {
        gumbel_family(a.g0_seed, a.g0_count)
    } else {
        a.g0.iter().map(|&g0| GumbelConfig { g0 }).collect()
    };
    let mut samplers = Vec::new();
    for kind in &a.samplers {
        match kind {
            SamplerArg::Mvtm => {
                for g in &g0s {
                    g.validate().map_err(|e| usage(e.to_string()))?;
                    samplers.push((format!("mvtm-g0={:.4}", g.g0), Sampler::Mvtm(*g)));
                }
            }
            SamplerArg::Hybrid => samplers.push(("hybrid".to_string(), Sampler::Hybrid(BTreeSet::new()))),
            SamplerArg::Rehash => samplers.push(("rehash".to_string(), Sampler::Rehash)),
            SamplerArg::Dfm => samplers.push(("dfm".to_string(), Sampler::Dfm)),
        }
    }
    let template = sample_config(1, &a.guidance)?;
    let mut rows = Vec::new();
    for &steps in &a.step_counts {
        if steps == 0 {
            return Err(usage("--steps entries must be at least 1"));
        }
        // Hybrid refines at the middle and final steps of each K.
        let per_k: Vec<(String, Sampler)> = samplers
            .iter()
            .map(|(n, s)| match s {
                Sampler::Hybrid(_) => (n.clone(), Sampler::default_hybrid(steps)),
                other => (n.clone(), other.clone()),
            })
            .collect();
        let settings =
            BenchSettings { samples: a.num_samples, labels: labels.clone(), sample: template.clone(), sched: SCHED };
        rows.extend(sampler_bench(&ds, den.as_ref(), &per_k, &[steps], &a.seeds, &settings)?.rows);
    }
    let report = rehash_diffusion::eval::BenchReport { rows };
    write_file(&a.out, report.to_csv())?;
    for s in report.summary() {
        println!("{:<18} K={:<4} mean tv {:.4} (std {:.4}, {} seeds)", s.sampler, s.steps, s.mean_tv, s.std_tv, s.seeds);
    }
    let input_refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    finish(ctx, a, a.seeds.first().copied(), &input_refs, &[a.out.clone()])
}

fn sweep_cmd(a: &SweepArgs, ctx: &Context) -> Result<i32> {
    let ds = load_dataset(&a.dataset)?;
    if a.m_list.is_empty() || a.m_list.contains(&0) {
        return Err(usage("--m-list entries must be at least 1"));
    }
    let label = parse_label(&a.label)?;
    let sampler = sampler(a.sampler, a.g0, a.steps, None)?;
    let settings = BenchSettings {
        samples: a.num_samples,
        labels: vec![label],
        sample: sample_config(a.steps, &a.guidance)?,
        sched: SCHED,
    };
    let rows = capacity_sweep(&ds, &a.m_list, &train_config(&a.training), &sampler, &settings, a.seed)?;
    let csv = sweep_to_csv(&rows);
    write_file(&a.out, &csv)?;
    print!("{csv}");
    finish(ctx, a, Some(a.seed), &[&a.dataset], &[a.out.clone()])
}

fn kernel_check_cmd(a: &KernelCheckArgs, ctx: &Context) -> Result<i32> {
    let rows = kernel_check::run_suite(a.trials, a.seed)?;
    print!("{}", kernel_check::table(&rows));
    let mut outputs = Vec::new();
    if let Some(out) = &a.out {
        write_file(out, kernel_check::to_csv(&rows))?;
        outputs.push(out.clone());
    }
    if let Some(dir) = &a.dump_dir {
        outputs.extend(kernel_check::dump_matrices(dir)?);
    }
    if !outputs.is_empty() {
        finish(ctx, a, Some(a.seed), &[], &outputs)?;
    }
    Ok(if rows.iter().all(kernel_check::CheckRow::passed) { EXIT_OK } else { EXIT_FAILURE })
}
