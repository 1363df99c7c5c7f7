use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Graph-aware conformal prediction regions for graph time series.
#[derive(Debug, Parser)]
#[command(name = "graphcp", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment and write report.json, report.csv and config.json.
    Run(RunArgs),
    /// Run the cartesian product of several parameter lists.
    Grid(GridArgs),
    /// Generate a synthetic homophilic dataset.
    Generate(GenerateArgs),
    /// Check log det H <= -eta * tau for a graph over a list of tau values.
    VerifyShrinkage(VerifyArgs),
    /// Convert datasets between JSON and CSV.
    Convert(ConvertArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    GraphAware,
    GraphAgnostic,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PredictorArg {
    Persistence,
    GraphAr,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum QuantileArg {
    Forest,
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GraphArg {
    Ring,
    Grid,
    Er,
}

/// Experiment inputs shared by `run` and `grid`. Flags override values read
/// from `--config`.
#[derive(Debug, Clone, Args)]
pub struct ExperimentArgs {
    /// Dataset file (JSON, or CSV signals together with --edges).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Edge list CSV, required when --dataset is a CSV file.
    #[arg(long)]
    pub edges: Option<PathBuf>,
    /// Experiment config file (TOML or JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Miscoverage level in (0, 1).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Score window length for the quantile regressor.
    #[arg(long)]
    pub window: Option<usize>,
    /// Filter coefficient in [0, 1].
    #[arg(long)]
    pub tau: Option<f64>,
    /// Number of steps ahead.
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Number of seeded runs.
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Refit the residual model and quantile regressor every k steps.
    #[arg(long)]
    pub refit_interval: Option<usize>,
    #[arg(long, value_enum)]
    pub predictor: Option<PredictorArg>,
    /// Forecast trace JSON, required with --predictor external.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Number of bootstrap ensemble members.
    #[arg(long)]
    pub ensemble_size: Option<usize>,
    /// Autoregressive lags of the graph-AR predictor.
    #[arg(long)]
    pub lags: Option<usize>,
    #[arg(long, value_enum)]
    pub quantile: Option<QuantileArg>,
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub min_leaf: Option<usize>,
    /// Fraction of rows used for training.
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Z-score each node with training statistics before fitting.
    #[arg(long)]
    pub normalize: bool,
    /// Output directory; defaults to a folder under $GRAPHCP_OUT.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Root for default output directories.
    #[arg(long, env = "GRAPHCP_OUT", default_value = "graphcp-out")]
    pub out_root: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// Also write per-timestep regions to regions.jsonl.
    #[arg(long)]
    pub emit_regions: bool,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// Comma-separated alpha values.
    #[arg(long, value_delimiter = ',')]
    pub alphas: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub windows: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub horizons: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub taus: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 20)]
    pub nodes: usize,
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    #[arg(long, value_enum, default_value_t = GraphArg::Ring)]
    pub graph: GraphArg,
    /// Edge probability for --graph er.
    #[arg(long, default_value_t = 0.2)]
    pub edge_prob: f64,
    /// Share of independent noise; smaller is more homophilic.
    #[arg(long, default_value_t = 0.1)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.8)]
    pub ar_coef: f64,
    #[arg(long, default_value_t = 1.0)]
    pub noise_scale: f64,
    #[arg(long, default_value_t = 0.5)]
    pub latent_scale: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output dataset JSON file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Graph JSON or dataset JSON.
    #[arg(long)]
    pub graph: PathBuf,
    /// Comma-separated tau values.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.1, 0.25, 0.4, 0.5])]
    pub tau: Vec<f64>,
    /// Also write the rows as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[command(subcommand)]
    pub direction: ConvertDirection,
}

#[derive(Debug, Subcommand)]
pub enum ConvertDirection {
    /// Dataset JSON to signals.csv and edges.csv.
    JsonToCsv {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Signals and edges CSV to dataset JSON.
    CsvToJson {
        #[arg(long)]
        signals: PathBuf,
        #[arg(long)]
        edges: PathBuf,
        #[arg(long, default_value = "dataset")]
        name: String,
        #[arg(long)]
        out: PathBuf,
    },
}
