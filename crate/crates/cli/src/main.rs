//! `vesselgraph` command-line driver: synthetic data, training, lambda
//! sweeps, evaluation, overlays and gradient checks.

mod commands;
mod run_manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "vesselgraph", version, about = "Graph-smoothed vessel segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic vessel images, labels and a manifest.
    Synth(SynthArgs),
    /// Train one network.
    Train(TrainArgs),
    /// Train one network per lambda and score each on a test manifest.
    Sweep(SweepArgs),
    /// Score a checkpoint on a manifest.
    Eval(EvalArgs),
    /// Render TP/FN/FP/TN overlays.
    Overlay(OverlayArgs),
    /// Finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
}

/// Training settings shared by several subcommands. Flags override the
/// config file, which overrides the defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// `key = value` settings file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patches_per_epoch: Option<usize>,
    #[arg(long)]
    pub sample_m: Option<usize>,
    /// Input channels: green, gray or rgb.
    #[arg(long)]
    pub mode: Option<String>,
    /// BCE reduction: sum or mean.
    #[arg(long)]
    pub reduction: Option<String>,
    /// Scalar type: f32 or f64.
    #[arg(long)]
    pub precision: Option<String>,
    /// Feature maps per level, e.g. `8,16,32`.
    #[arg(long)]
    pub widths: Option<String>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    /// `none` or a comma list of hflip, vflip, rot90.
    #[arg(long)]
    pub augment: Option<String>,
    #[arg(long)]
    pub validation_images: Option<usize>,
    #[arg(long)]
    pub eval_stride: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    /// Image side length in pixels.
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Training manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub test_manifest: PathBuf,
    /// Comma-separated lambdas; defaults to 1e-4,1e-5,1e-6,1e-7.
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
    #[arg(long, default_value_t = vesselgraph::metrics::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Without a checkpoint the network has zero weights and predicts 0.5.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = vesselgraph::metrics::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Score every pixel even when a field-of-view mask is present.
    #[arg(long)]
    pub no_mask: bool,
    /// Also write probability maps and overlays per image.
    #[arg(long)]
    pub save_maps: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct OverlayArgs {
    /// Render every manifest entry from checkpoint predictions.
    #[arg(long, requires = "checkpoint", conflicts_with = "prob_map")]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Render one stored probability map (8-bit gray PNG).
    #[arg(long, requires = "label")]
    pub prob_map: Option<PathBuf>,
    #[arg(long)]
    pub label: Option<PathBuf>,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long, default_value_t = vesselgraph::metrics::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Flip the sign of analytic gradients; every suite must then fail.
    #[arg(long)]
    pub corrupt: bool,
    /// Directory for the report and run manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Overlay(a) => commands::overlay(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
