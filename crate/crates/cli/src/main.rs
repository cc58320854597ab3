//! `popup`: synthetic data, training, inference, evaluation, saliency and
//! the nearest-neighbour baseline from the command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use popup_core::baseline::EvalMode;
use popup_core::inference::VoteRule;

#[derive(Debug, Parser)]
#[command(name = "popup", version, about = "Object pose pop-up from human point clouds")]
pub struct Cli {
    /// Print the configuration for `--preset` as TOML and exit.
    #[arg(long)]
    pub dump_config: bool,
    /// Configuration preset used by `--dump-config`.
    #[arg(long, value_enum, default_value_t = Preset::Full)]
    pub preset: Preset,
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Full-size defaults.
    Full,
    /// Reduced sizes for a single CPU core.
    Desk,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic dataset.
    SynthData(SynthArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Estimate the object pose for one cloud or a directory of frames.
    Infer(InferArgs),
    /// Score a model (and optionally the baseline) on a dataset split.
    Eval(EvalArgs),
    /// Iterative gradient saliency of the input points.
    Saliency(SaliencyArgs),
    /// Nearest-neighbour retrieval from the training split.
    Baseline(BaselineArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// TOML run configuration; only its `[data]` section is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML run configuration; `[model]` and `[train]` are used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory or manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for checkpoints and the training log.
    #[arg(long)]
    pub out: PathBuf,
    /// Override the epoch count.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Override the training seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// A `.ply`/`.xyz` cloud, or with `--sequence` a directory of them
    /// taken in file-name order.
    #[arg(long)]
    pub cloud: PathBuf,
    /// Class name or id; predicted by the class head when omitted.
    #[arg(long)]
    pub class: Option<String>,
    /// Treat `--cloud` as a frame sequence (class vote and center smoothing).
    #[arg(long)]
    pub sequence: bool,
    /// Smoothing width in frames for `--sequence`.
    #[arg(long, default_value_t = popup_core::inference::DEFAULT_SIGMA)]
    pub sigma: f64,
    #[arg(long, value_enum, default_value_t = Vote::Majority)]
    pub vote: Vote,
    /// Directory for pose JSON, posed mesh OBJ and keypoint PLY files.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory or manifest.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_parser = parse_mode, default_value = "given-class")]
    pub mode: EvalMode,
    /// Also evaluate this baseline.
    #[arg(long, value_enum)]
    pub baseline: Option<Baseline>,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Evaluate whole sequences: class vote and center smoothing.
    #[arg(long)]
    pub sequence: bool,
    #[arg(long, default_value_t = popup_core::inference::DEFAULT_SIGMA)]
    pub sigma: f64,
    #[arg(long, value_enum, default_value_t = Vote::Majority)]
    pub vote: Vote,
    /// Directory for the text, JSON and confusion CSV reports.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SaliencyArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub cloud: PathBuf,
    /// Class name or id.
    #[arg(long)]
    pub class: String,
    /// Ground-truth pose JSON: one record, or a sequence file with `--frame`.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub frame: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0.01)]
    pub fraction: f64,
    #[arg(long, default_value_t = 0.05)]
    pub step: f64,
    /// Directory for scores.ply, touched.json and trace.ndjson.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    /// Dataset directory or manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// Query cloud with the dataset's point count and ordering.
    #[arg(long)]
    pub query: PathBuf,
    /// Restrict retrieval to one class (name or id).
    #[arg(long)]
    pub class: Option<String>,
    /// Training frames are strided down to this rate.
    #[arg(long, default_value_t = 10.0)]
    pub fps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Vote {
    Majority,
    MaxScore,
}

impl From<Vote> for VoteRule {
    fn from(v: Vote) -> Self {
        match v {
            Vote::Majority => VoteRule::Majority,
            Vote::MaxScore => VoteRule::MaxScore,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Nn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

fn parse_mode(s: &str) -> Result<EvalMode, String> {
    s.parse().map_err(|e: popup_core::Error| e.to_string())
}

/// Raised for argument combinations clap cannot check.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<popup_core::Error>() {
            return if e.is_numeric() { 3 } else { 2 };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
