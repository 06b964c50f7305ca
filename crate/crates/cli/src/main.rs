//! `evtrack`: generate synthetic DVS recordings, train ConvLSTM and
//! change-based ConvLSTM pupil trackers, and measure their accuracy and
//! operation counts.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use evtrack_core::cells::{CellKind, DeltaRule};

use crate::commands::CliError;

pub const THREADS_ENV: &str = "THREETET_THREADS";

#[derive(Debug, Parser)]
#[command(name = "evtrack", version, about = "Event-based pupil tracking with change-based ConvLSTMs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labelled synthetic recording.
    Gen(GenArgs),
    /// Train a model on one or more recordings.
    Train(TrainArgs),
    /// Evaluate trained weights on a recording.
    Eval(EvalArgs),
    /// Evaluate trained weights as a change-based network at several thresholds.
    SweepTheta(SweepThetaArgs),
    /// Train one model per sequence length and compare detection rates.
    SweepSeqlen(SweepSeqlenArgs),
    /// Analytic dense MACs, or measured MACs when weights and data are given.
    CountOps(CountOpsArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args)]
pub struct OutArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20.0)]
    pub duration_s: f64,
    #[arg(long, default_value_t = evtrack_core::events::DEFAULT_DELTA_T_US)]
    pub delta_t_us: u64,
    #[arg(long, default_value_t = evtrack_core::events::DEFAULT_WIDTH)]
    pub width: u16,
    #[arg(long, default_value_t = evtrack_core::events::DEFAULT_HEIGHT)]
    pub height: u16,
    /// Background noise events per pixel per second.
    #[arg(long)]
    pub noise_hz: Option<f64>,
    /// Keep the pupil still at the frame centre.
    #[arg(long)]
    pub static_pupil: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Recurrent cell: `vanilla` or `cb`.
    #[arg(long, default_value = "cb")]
    pub cell: CellKind,
    /// Change threshold used at evaluation time.
    #[arg(long, default_value_t = 0.0)]
    pub theta: f64,
    /// `magnitude` keeps |ΔH| >= θ, `signed` keeps ΔH >= θ.
    #[arg(long, default_value = "magnitude")]
    pub delta_rule: DeltaRule,
    /// Hidden channels per recurrent layer.
    #[arg(long, value_delimiter = ',', default_values_t = evtrack_core::model::DEFAULT_CHANNELS)]
    pub channels: Vec<usize>,
    #[arg(long, default_value_t = 128)]
    pub fc_hidden: usize,
}

#[derive(Debug, Clone, Args)]
pub struct TrainingArgs {
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 40)]
    pub seq_len: usize,
    /// Fraction of each recording used for training.
    #[arg(long, default_value_t = 0.8)]
    pub split: f64,
    /// Change threshold active while training.
    #[arg(long, default_value_t = 0.0)]
    pub train_theta: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train on a random subset of this many clips per epoch.
    #[arg(long)]
    pub max_clips_per_epoch: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Recording directory; repeat for several recordings.
    #[arg(long, required = true)]
    pub data: Vec<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitPart {
    Train,
    Val,
    All,
}

#[derive(Debug, Clone, Args)]
pub struct EvalTarget {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long, required = true)]
    pub data: Vec<PathBuf>,
    /// Override the cell kind stored with the weights.
    #[arg(long)]
    pub cell: Option<CellKind>,
    /// Override the threshold stored with the weights.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Override the sequence length stored with the weights.
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long, value_enum, default_value_t = SplitPart::Val)]
    pub part: SplitPart,
    #[arg(long, default_value_t = 0.8)]
    pub split: f64,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    /// Multiply pixel distances by this factor before applying the detection
    /// thresholds (use it when the data is not at network resolution).
    #[arg(long, default_value_t = 1.0)]
    pub pixel_scale: f64,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub target: EvalTarget,
    /// Also print the tables to stdout.
    #[arg(long)]
    pub pretty: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SweepThetaArgs {
    #[command(flatten)]
    pub target: EvalTarget,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.1, 0.2, 0.5])]
    pub thetas: Vec<f64>,
    #[arg(long)]
    pub pretty: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SweepSeqlenArgs {
    #[arg(long, required = true)]
    pub data: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![2, 10, 20, 40])]
    pub seq_lens: Vec<usize>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
    #[arg(long)]
    pub pretty: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args)]
pub struct CountOpsArgs {
    #[arg(long, default_value_t = evtrack_core::events::DEFAULT_WIDTH)]
    pub width: u16,
    #[arg(long, default_value_t = evtrack_core::events::DEFAULT_HEIGHT)]
    pub height: u16,
    #[arg(long, value_delimiter = ',', default_values_t = evtrack_core::model::DEFAULT_CHANNELS)]
    pub channels: Vec<usize>,
    #[arg(long, default_value_t = 128)]
    pub fc_hidden: usize,
    /// 1 counts MACs, 2 counts multiplies and adds separately.
    #[arg(long, default_value_t = 1)]
    pub flops_per_mac: u64,
    /// With `--data`, measure effective MACs of these weights.
    #[arg(long, requires = "data")]
    pub weights: Option<PathBuf>,
    #[arg(long, requires = "weights")]
    pub data: Vec<PathBuf>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub cell: Option<CellKind>,
    /// Output directory; tables are printed when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run.
    pub manifest: PathBuf,
    /// Write to this directory instead of the recorded one.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
    // A pool may already exist when the CLI is driven in-process.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = configure_threads().and_then(|_| commands::run(cli.command, &argv[1..]));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
