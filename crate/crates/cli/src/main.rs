mod commands;
mod error;
mod manifest;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "geoloc", version, about = "Static object geolocalization from monocular geo-tagged video")]
pub struct Cli {
    /// Seed overriding the one in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON configuration for the command.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic scenes (simulator configuration).
    Simulate(SimulateArgs),
    /// Build a matching dataset from scene files.
    Dataset(DatasetArgs),
    /// Train the matcher (matcher configuration).
    Train(TrainArgs),
    /// Track one scene and geolocate its objects (tracker configuration).
    Track(TrackArgs),
    /// Compute tracking and geolocation metrics.
    Evaluate(EvaluateArgs),
    /// Render an evaluation report as SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Number of scenes; scene k uses seed + k.
    #[arg(long, default_value_t = 1)]
    pub scenes: usize,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// Scene JSON files.
    #[arg(required = true)]
    pub scenes: Vec<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub pairs_per_scene: usize,
    /// Largest frame gap between paired frames.
    #[arg(long, default_value_t = 35)]
    pub n_max: usize,
    #[arg(long, default_value_t = 30)]
    pub capacity: usize,
    /// Depth normalization of pose targets (m).
    #[arg(long, default_value_t = 50.0)]
    pub depth_scale: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset written by `dataset`.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Weight of the pose loss; 0 disables the pose head.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub softmax_axis: Option<AxisArg>,
    /// Continue from a checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AxisArg {
    Candidates,
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AffinityArg {
    Learned,
    Geometric,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AggregationArg {
    Median,
    Mean,
    InverseDepth,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Matcher checkpoint; required with the learned affinity.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "learned")]
    pub affinity: AffinityArg,
    /// Drop tracks observed in fewer frames.
    #[arg(long)]
    pub min_instances: Option<usize>,
    #[arg(long, value_enum)]
    pub aggregation: Option<AggregationArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CriterionArg {
    Euclidean,
    Mahalanobis,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Ground truth: a scene JSON file or a MOT file.
    #[arg(long)]
    pub gt: PathBuf,
    /// Tracker MOT output.
    #[arg(long)]
    pub hyp: PathBuf,
    /// Geolocation JSON from `track`; needs a scene as ground truth.
    #[arg(long)]
    pub locations: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
    #[arg(long, value_enum, default_value = "euclidean")]
    pub criterion: CriterionArg,
    /// Euclidean acceptance radius (m).
    #[arg(long, default_value_t = 2.0)]
    pub radius: f64,
    /// Mahalanobis semi-axes `x,y,z` (m).
    #[arg(long, value_delimiter = ',')]
    pub semi_axes: Option<Vec<f64>>,
    /// Mahalanobis distance limit.
    #[arg(long, default_value_t = 3.0)]
    pub limit: f64,
    /// Maximum facing-direction error (degrees).
    #[arg(long)]
    pub rotation_gate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Report JSON written by `evaluate`.
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, default_value = "Precision / recall")]
    pub title: String,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    std::fs::create_dir_all(&cli.out).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", cli.out.display())))?;
    match &cli.command {
        Command::Simulate(a) => commands::simulate(cli, a),
        Command::Dataset(a) => commands::dataset(cli, a),
        Command::Train(a) => commands::train(cli, a),
        Command::Track(a) => commands::track(cli, a),
        Command::Evaluate(a) => commands::evaluate(cli, a),
        Command::Plot(a) => commands::plot(cli, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
