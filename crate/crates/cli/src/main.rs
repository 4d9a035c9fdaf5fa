use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;

/// Scale-equivariant denoising toolkit.
///
/// Every subcommand prints its fully resolved config as TOML before running
/// and writes it to `<out>/<command>.toml`; pass that file back with
/// `--config` to repeat the run.
#[derive(Debug, Parser)]
#[command(name = "eqnet", version)]
pub struct Cli {
    /// Seed applied to every random choice of the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// TOML config as echoed by a previous run; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Corrupt every image in a directory and write a manifest.
    GenNoise(GenNoiseArgs),
    /// Train a network on clean images with Gaussian noise.
    Train(TrainArgs),
    /// Denoise every image in a directory with a checkpoint.
    Denoise(DenoiseArgs),
    /// Score a checkpoint on an ID/OOD noise grid.
    Eval(EvalArgs),
    /// Homogeneity audit of a checkpoint.
    Audit(AuditArgs),
    /// Train and compare several network variants.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Family {
    Gaussian,
    Speckle,
    Poisson,
    Mixture,
    SpeckleVariant,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Base {
    Gaussian,
    Laplace,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Variant {
    Sincos,
    Peaks,
    GaussKernels,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Preset {
    Sevnet,
    Baseline,
    LayernormGelu,
}

#[derive(Debug, Args)]
pub struct GenNoiseArgs {
    /// Directory of clean PNG/PGM images.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub family: Option<Family>,
    /// Noise level on the 0-255 scale.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Poisson strength.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub base: Option<Base>,
    /// Level map for `speckle-variant`.
    #[arg(long)]
    pub variant: Option<Variant>,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// Directory of clean training images.
    #[arg(long, conflicts_with = "synthetic")]
    pub data: Option<PathBuf>,
    /// Use this many procedurally generated images instead of `--data`.
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Side length of synthetic images.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Network preset; ignored when `--spec` is given.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// NetworkSpec TOML file.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub in_channels: Option<usize>,
    #[arg(long)]
    pub base_channels: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// EvalGrid TOML file; defaults to the standard ID/OOD grid.
    #[arg(long)]
    pub grid: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Probe images; three synthetic images when omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Train every ablation variant and print the comparison table.
    #[arg(long, conflicts_with = "directional")]
    pub table4: bool,
    /// Baseline versus LayerNorm+GELU OOD gap over several seeds.
    #[arg(long)]
    pub directional: bool,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Directory of clean evaluation images; synthetic when omitted.
    #[arg(long)]
    pub eval_data: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
}

/// Failure classes and their exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(eqnet_core::Error),
    Assertion(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Assertion(_) => 3,
        }
    }
}

impl From<eqnet_core::Error> for Failure {
    fn from(e: eqnet_core::Error) -> Self {
        use eqnet_core::Error as E;
        match e {
            E::Config(_) | E::InvalidFlags(..) | E::Unknown { .. } => Failure::Usage(e.to_string()),
            other => Failure::Data(other),
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Data(e) => write!(f, "error: {e}"),
            Failure::Assertion(m) => write!(f, "assertion failed: {m}"),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{f}");
            ExitCode::from(f.code())
        }
    }
}
