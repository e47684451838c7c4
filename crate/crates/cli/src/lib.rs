//! Command-line driver: dataset generation, training, sampling, evaluation,
//! benchmarks, the capacity sweep and the kernel invariant suite.
//!
//! Every subcommand that writes files also writes `<output>.manifest.json`
//! recording the effective arguments and file digests; re-running the
//! recorded arguments reproduces the outputs byte for byte.

pub mod commands;
pub mod config;
pub mod export;
pub mod kernel_check;
pub mod manifest;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Invalid combination of arguments detected after parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser, Serialize)]
#[command(name = "rehash", version, about = "Multi-index masked discrete diffusion on toy token data")]
#[command(after_help = "Any subcommand accepts --config FILE with key=value lines; flags given on the command line win.")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Generate a synthetic dataset.
    GenData(GenDataArgs),
    /// Train the linear softmax denoiser.
    Train(TrainArgs),
    /// Draw sequences with one of the reverse samplers.
    Sample(SampleArgs),
    /// Compare a sample file with the dataset distribution.
    Eval(EvalArgs),
    /// Total-variation benchmark across samplers, step counts and seeds.
    Bench(BenchArgs),
    /// Retrain and resample across mask capacities.
    Sweep(SweepArgs),
    /// Run the kernel invariant suite.
    KernelCheck(KernelCheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataKind {
    Grid,
    Markov,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct GenDataArgs {
    #[arg(long, value_enum, default_value_t = DataKind::Grid)]
    pub kind: DataKind,
    /// Number of valid colours or states.
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    /// Mask capacity recorded in the dataset header.
    #[arg(long, default_value_t = 4)]
    pub m: usize,
    /// Grid side; sequences have side² cells.
    #[arg(long, default_value_t = 3)]
    pub side: usize,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    /// Cap on patterns per class; larger families are subsampled.
    #[arg(long, default_value_t = 64)]
    pub max_per_class: usize,
    /// Markov sequence length.
    #[arg(long, default_value_t = 4)]
    pub len: usize,
    /// Markov transition rows, `;`-separated rows of `,`-separated probabilities.
    #[arg(long)]
    pub transitions: Option<String>,
    /// Markov initial distribution; uniform when absent.
    #[arg(long)]
    pub initial: Option<String>,
    /// Draws kept when the chain is too large to enumerate.
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossArg {
    DdmLinear,
    DdmGeneral,
    Mvtm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerArg {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum KeepArg {
    Final,
    Best,
}

/// Optimisation settings shared by `train` and `sweep`.
#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainingArgs {
    #[arg(long = "train-steps", default_value_t = 2000)]
    pub train_steps: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    pub optimizer: OptimizerArg,
    #[arg(long, value_enum, default_value_t = LossArg::DdmLinear)]
    pub loss: LossArg,
    #[arg(long, default_value_t = 1e-3)]
    pub t_min: f64,
    #[arg(long, default_value_t = 0.1)]
    pub label_drop: f64,
    /// Append the time as an extra bias channel.
    #[arg(long)]
    pub time_channel: bool,
    #[arg(long, default_value_t = 100)]
    pub log_every: usize,
    #[arg(long = "train-seed", default_value_t = 0)]
    pub train_seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Parameter file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Metrics CSV; defaults to `<out>.log.csv`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Which snapshot to save.
    #[arg(long, value_enum, default_value_t = KeepArg::Final)]
    pub keep: KeepArg,
    #[command(flatten)]
    pub training: TrainingArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DenoiserArg {
    Exact,
    Linear,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DenoiserArgs {
    /// Dataset file; required by the exact denoiser and by evaluation.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DenoiserArg::Exact)]
    pub denoiser: DenoiserArg,
    /// Parameter file for the linear denoiser.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerArg {
    Rehash,
    Mvtm,
    Dfm,
    Hybrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimelineArg {
    Linear,
    Arccos,
    Square,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpaceArg {
    Logit,
    Probability,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecodeLimitArg {
    Unbounded,
    /// At most one newly decoded token per step.
    One,
}

/// Step schedule and guidance shared by the sampling subcommands.
#[derive(Debug, Clone, Args, Serialize)]
pub struct GuidanceArgs {
    #[arg(long, value_enum, default_value_t = TimelineArg::Linear)]
    pub timeline: TimelineArg,
    /// Constant guidance strength.
    #[arg(long, default_value_t = 1.0)]
    pub cfg: f64,
    /// Guidance at the first step of a linearly increasing schedule.
    #[arg(long, requires = "cfg_hi")]
    pub cfg_lo: Option<f64>,
    /// Guidance at the last step of a linearly increasing schedule.
    #[arg(long, requires = "cfg_lo")]
    pub cfg_hi: Option<f64>,
    #[arg(long, value_enum, default_value_t = SpaceArg::Logit)]
    pub cfg_space: SpaceArg,
    #[arg(long, value_enum, default_value_t = DecodeLimitArg::Unbounded)]
    pub decode_limit: DecodeLimitArg,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct SampleArgs {
    #[command(flatten)]
    pub denoiser: DenoiserArgs,
    #[arg(long, value_enum, default_value_t = SamplerArg::Rehash)]
    pub sampler: SamplerArg,
    #[arg(long, default_value_t = 8)]
    pub steps: usize,
    #[command(flatten)]
    pub guidance: GuidanceArgs,
    /// Base Gumbel intensity for the MVTM sampler.
    #[arg(long, default_value_t = 1.0)]
    pub g0: f64,
    /// 1-based steps run as DFM updates by the hybrid sampler; defaults to
    /// the middle and final steps, and an empty value selects none.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub dfm_steps: Option<Vec<usize>>,
    /// Class index or `null`.
    #[arg(long, default_value = "null")]
    pub label: String,
    #[arg(long, default_value_t = 1000)]
    pub num_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// One line of flat indices; mask indices mark positions to generate.
    #[arg(long)]
    pub inpaint: Option<PathBuf>,
    /// Flat-index CSV of the outputs.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional PGM montage of the first `--grid-tiles` outputs.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub grid_tiles: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Sample CSV written by `sample`.
    #[arg(long)]
    pub samples: PathBuf,
    /// Label whose distribution the samples are compared with.
    #[arg(long, default_value = "null")]
    pub label: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct BenchArgs {
    #[command(flatten)]
    pub denoiser: DenoiserArgs,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "rehash,mvtm")]
    pub samplers: Vec<SamplerArg>,
    #[arg(long = "steps", value_delimiter = ',', default_value = "4,8,16")]
    pub step_counts: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5,6,7,8,9")]
    pub seeds: Vec<u64>,
    /// Explicit MVTM intensities; otherwise `--g0-count` are drawn from [0.5, 4].
    #[arg(long, value_delimiter = ',')]
    pub g0: Vec<f64>,
    #[arg(long, default_value_t = 3)]
    pub g0_count: usize,
    #[arg(long, default_value_t = 0)]
    pub g0_seed: u64,
    /// Comma-separated labels, or `all` for every class.
    #[arg(long, default_value = "all")]
    pub labels: String,
    #[arg(long, default_value_t = 100_000)]
    pub num_samples: usize,
    #[command(flatten)]
    pub guidance: GuidanceArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct SweepArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16")]
    pub m_list: Vec<usize>,
    #[command(flatten)]
    pub training: TrainingArgs,
    #[arg(long, value_enum, default_value_t = SamplerArg::Rehash)]
    pub sampler: SamplerArg,
    #[arg(long, default_value_t = 8)]
    pub steps: usize,
    #[command(flatten)]
    pub guidance: GuidanceArgs,
    #[arg(long, default_value_t = 1.0)]
    pub g0: f64,
    /// Label to sample, or `null` for the unconditional distribution.
    #[arg(long, default_value = "null")]
    pub label: String,
    #[arg(long, default_value_t = 10_000)]
    pub num_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct KernelCheckArgs {
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the result table as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write example transition matrices as CSV into this directory.
    #[arg(long)]
    pub dump_dir: Option<PathBuf>,
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let (merged, _) = match config::expand_config(&argv) {
        Ok(v) => v,
        Err(e) => return report(e),
    };
    let cli = match Cli::try_parse_from(&merged) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let ctx = commands::Context { argv: merged.iter().map(|a| a.to_string_lossy().into_owned()).collect() };
    match commands::dispatch(&cli.command, &ctx) {
        Ok(code) => code,
        Err(e) => report(e),
    }
}

fn report(e: anyhow::Error) -> i32 {
    if e.downcast_ref::<UsageError>().is_some() {
        eprintln!("error: {e}\n\nFor more information, try '--help'.");
        EXIT_USAGE
    } else {
        eprintln!("error: {e:#}");
        EXIT_FAILURE
    }
}
