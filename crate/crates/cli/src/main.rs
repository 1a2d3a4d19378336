//! `scfa` — command-line entry point for every pipeline stage.
//!
//! Every subcommand prints its effective configuration (all resolved values,
//! defaults included) before doing any work. Failures print one line of the
//! form `scfa-error: <kind>: <message>` to stderr and exit non-zero: 2 for
//! bad input (missing files, malformed manifests, invalid configuration), 1
//! for failed checks and runtime errors.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "scfa",
    version,
    about = "Supervised contrastive frame aggregation"
)]
struct Cli {
    /// `key=value` configuration file; command-line flags take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Base seed threaded through every stochastic component.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override any configuration key (repeatable), e.g. `--set tau=0.1`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the labelled synthetic moving-shape video dataset.
    GenSynth(GenSynthArgs),
    /// Write aggregated grid images for every video of a manifest.
    Aggregate(AggregateArgs),
    /// Contrastive pretraining; writes checkpoints and metrics.
    Train(TrainArgs),
    /// Linear-probe accuracy of a checkpoint (or of exported features).
    Probe(ProbeArgs),
    /// End-to-end fine-tuning accuracy starting from a checkpoint.
    Finetune(FinetuneArgs),
    /// Closed-form versus Monte Carlo probability that a frame is never sampled.
    Coverage(CoverageArgs),
    /// Finite-difference check of the analytic gradients.
    Gradcheck,
    /// Side-by-side image of two sampled views of one video.
    Montage(MontageArgs),
}

#[derive(Debug, Args)]
struct GenSynthArgs {
    /// Output directory (frames under `videos/`, plus `manifest.csv`).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    num_classes: Option<usize>,
    #[arg(long)]
    videos_per_class: Option<usize>,
    /// Frames per video.
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    height: Option<u32>,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    speed_jitter: Option<f64>,
    #[arg(long)]
    shape_scale: Option<f64>,
    #[arg(long)]
    color_jitter: Option<f64>,
}

/// Flags mirroring the most used `TrainConfig` fields.
#[derive(Debug, Args, Default)]
struct TrainFlags {
    /// Dataset manifest (`path,label,video_id` per line).
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    frames_per_view: Option<usize>,
    /// `without_replacement` or `with_replacement`.
    #[arg(long)]
    sampling_mode: Option<String>,
    #[arg(long)]
    grid_rows: Option<u32>,
    #[arg(long)]
    grid_cols: Option<u32>,
    #[arg(long)]
    cell_h: Option<u32>,
    #[arg(long)]
    cell_w: Option<u32>,
    /// Videos per contrastive batch.
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr_max: Option<f64>,
    #[arg(long)]
    lr_min: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    proj_dim: Option<usize>,
    /// Use a single linear projection layer instead of the two-layer MLP.
    #[arg(long)]
    linear_projection: bool,
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    eval_seeds: Option<usize>,
    #[arg(long)]
    probe_epochs: Option<usize>,
    #[arg(long)]
    probe_views: Option<usize>,
    #[arg(long)]
    finetune_epochs: Option<usize>,
}

#[derive(Debug, Args)]
struct AggregateArgs {
    #[command(flatten)]
    train: TrainFlags,
    /// Output directory for the PNG grid images.
    #[arg(long)]
    out: PathBuf,
    /// Sampled views per video.
    #[arg(long, default_value_t = 2)]
    views: usize,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    train: TrainFlags,
    /// Run directory for checkpoints, metrics and the config echo.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ProbeArgs {
    #[command(flatten)]
    train: TrainFlags,
    /// Checkpoint to evaluate.
    #[arg(long, conflicts_with_all = ["random_init", "features"])]
    checkpoint: Option<PathBuf>,
    /// Evaluate a freshly initialised encoder instead of a checkpoint.
    #[arg(long)]
    random_init: bool,
    /// Probe an exported feature file instead of running the encoder.
    #[arg(long, conflicts_with = "random_init")]
    features: Option<PathBuf>,
    /// Number of classes for `--features` (default: largest label + 1).
    #[arg(long)]
    num_classes: Option<usize>,
    /// Also write the encoder features of every video (one view each).
    #[arg(long)]
    export_features: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FinetuneArgs {
    #[command(flatten)]
    train: TrainFlags,
    #[arg(long, conflicts_with = "random_init")]
    checkpoint: Option<PathBuf>,
    /// Start from a freshly initialised encoder instead of a checkpoint.
    #[arg(long)]
    random_init: bool,
}

#[derive(Debug, Args)]
struct CoverageArgs {
    /// Frames per video; with `--y` and `--B` selects a single row instead of the default grid.
    #[arg(long = "T")]
    frame_count: Option<usize>,
    /// Frames per view.
    #[arg(long = "y")]
    frames_per_view: Option<usize>,
    /// Number of batches.
    #[arg(long = "B")]
    batches: Option<usize>,
    #[arg(long, default_value_t = 1_000_000)]
    trials: u64,
    /// Agreement threshold in standard errors.
    #[arg(long, default_value_t = 4.0)]
    k: f64,
}

#[derive(Debug, Args)]
struct MontageArgs {
    #[command(flatten)]
    train: TrainFlags,
    /// Video id from the manifest (default: the first entry).
    #[arg(long)]
    video: Option<String>,
    /// Output PNG path.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("scfa-error: {}: {}", failure.kind, failure.message);
            ExitCode::from(failure.code)
        }
    }
}
