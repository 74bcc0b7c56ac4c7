//! `sdsr`: synthesise data, train, evaluate, profile and render.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

mod commands;
mod io;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sdsr::events::PolarityMode;
use sdsr::network::Mode;

#[derive(Parser, Debug)]
#[command(name = "sdsr", version, about = "Event-stream super-resolution with sigma-delta networks")]
struct Cli {
    /// Worker threads (default: all cores). SDSR_THREADS overrides this flag.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate moving-bar HR streams and their 2x downsampled LR pairs.
    Synth(SynthArgs),
    /// Halve a stream's resolution by merging 2x2 pixel blocks.
    Downsample(DownsampleArgs),
    /// Train a network on an LR/HR dataset directory.
    Train(TrainArgs),
    /// Score a checkpoint (or stored predictions) against a dataset.
    Eval(EvalArgs),
    /// Per-layer events, synops and sparsity ratios.
    Profile(ProfileArgs),
    /// Render PSTH bins of a stream as PGM frames.
    Render(RenderArgs),
}

#[derive(Args, Debug, Clone, serde::Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 32)]
    pub width: u32,
    #[arg(long, default_value_t = 32)]
    pub height: u32,
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    /// Bar speed in pixels per millisecond.
    #[arg(long, default_value_t = 0.4)]
    pub speed: f64,
    /// Per-pair speeds are drawn uniformly from `speed ± speed-jitter`.
    #[arg(long, default_value_t = 0.0)]
    pub speed_jitter: f64,
    #[arg(long, default_value_t = 100.0)]
    pub duration_ms: f64,
    #[arg(long, value_enum, default_value_t = PolarityArg::Random)]
    pub polarity: PolarityArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PolarityArg {
    Light,
    Dark,
    Random,
}

impl From<PolarityArg> for PolarityMode {
    fn from(p: PolarityArg) -> Self {
        match p {
            PolarityArg::Light => PolarityMode::Light,
            PolarityArg::Dark => PolarityMode::Dark,
            PolarityArg::Random => PolarityMode::Random,
        }
    }
}

#[derive(Args, Debug, Clone, serde::Serialize)]
pub struct DownsampleArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Sdnn,
    Snn,
    Ann,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Sdnn => Mode::Sdnn,
            ModeArg::Snn => Mode::Snn,
            ModeArg::Ann => Mode::Ann,
        }
    }
}

/// Rasterisation shared by training, evaluation and profiling.
#[derive(Args, Debug, Clone, serde::Serialize)]
pub struct TimingArgs {
    /// Step length in milliseconds.
    #[arg(long, default_value_t = 1.0)]
    pub dt_ms: f64,
    /// Sequence length; defaults to the longest stream in the data.
    #[arg(long)]
    pub steps: Option<usize>,
    /// PSTH bin width for the spatial loss and metrics.
    #[arg(long, default_value_t = 50.0)]
    pub bin_ms: f64,
}

#[derive(Args, Debug, Clone, serde::Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Sdnn)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 25)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    /// Weight of the temporal loss.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Weight of the PSTH loss.
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Save a checkpoint every this many epochs (the final one is always saved).
    #[arg(long, default_value_t = 1)]
    pub checkpoint_every: usize,
    #[command(flatten)]
    pub timing: TimingArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatArg {
    Table,
    Json,
}

#[derive(Args, Debug, Clone, serde::Serialize)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["ckpt", "pred_dir"])))]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Score existing `.evt` predictions named like the dataset files.
    #[arg(long)]
    pub pred_dir: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Table)]
    pub report: FormatArg,
    /// Report file; defaults to `eval.json` or `eval.txt` beside the checkpoint or predictions.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write decoded predictions here (checkpoint mode only).
    #[arg(long, requires = "ckpt")]
    pub save_predictions: Option<PathBuf>,
    /// Modes to profile alongside the metrics (checkpoint mode only).
    #[arg(long, value_enum, value_delimiter = ',')]
    pub modes: Vec<ModeArg>,
    #[command(flatten)]
    pub timing: TimingArgs,
}

#[derive(Args, Debug, Clone, serde::Serialize)]
pub struct ProfileArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "sdnn,snn,ann")]
    pub modes: Vec<ModeArg>,
    /// Data-independent ANN column from layer shapes alone.
    #[arg(long)]
    pub structural: bool,
    /// LR input height for `--structural` without a checkpoint.
    #[arg(long, default_value_t = 17)]
    pub height: usize,
    /// LR input width for `--structural` without a checkpoint.
    #[arg(long, default_value_t = 17)]
    pub width: usize,
    #[arg(long, value_enum, default_value_t = FormatArg::Table)]
    pub format: FormatArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub timing: TimingArgs,
}

#[derive(Args, Debug, Clone, serde::Serialize)]
pub struct RenderArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 50.0)]
    pub bin_ms: f64,
    /// Ground truth for a side-by-side composite (needs `--pred`).
    #[arg(long, requires = "pred")]
    pub gt: Option<PathBuf>,
    /// Prediction for a side-by-side composite (needs `--gt`).
    #[arg(long, requires = "gt")]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn configure_threads(flag: Option<usize>) -> anyhow::Result<()> {
    let from_env = match std::env::var("SDSR_THREADS") {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|_| anyhow::anyhow!("SDSR_THREADS must be a positive integer, got {v:?}"))?,
        ),
        Err(_) => None,
    };
    if let Some(n) = from_env.or(flag) {
        if n == 0 {
            anyhow::bail!("thread count must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let result = configure_threads(cli.threads).and_then(|()| match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Downsample(a) => commands::downsample(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Profile(a) => commands::profile(&a),
        Command::Render(a) => commands::render(&a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<commands::UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
