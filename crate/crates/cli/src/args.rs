use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "psbp", version, about = "Spatial probit stick-breaking mixtures for areal data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate replicate datasets for a simulation design.
    Simulate(SimulateArgs),
    /// Run one or more models on a dataset or a simulated design.
    Fit(FitArgs),
    /// Tabulate error metrics and posterior-median maps from fitted traces.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Four-quadrant clusters with confounded risk factors.
    Study1,
    /// Spatially smooth log relative risks drawn from the GMRF.
    Study2,
}

impl Preset {
    pub fn name(&self) -> &'static str {
        match self {
            Preset::Study1 => "study1",
            Preset::Study2 => "study2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "study1" => Some(Preset::Study1),
            "study2" => Some(Preset::Study2),
            _ => None,
        }
    }

    /// Models fitted when `--model` is omitted.
    pub fn default_models(&self) -> Vec<String> {
        let names: &[&str] = match self {
            Preset::Study1 => &["M1", "M2", "M3", "M4", "M5", "M6", "M6A"],
            Preset::Study2 => &["NP", "CAR"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub preset: Preset,
    /// Number of replicate datasets per scenario.
    #[arg(long, default_value_t = 30)]
    pub replicates: usize,
    /// Base seed; replicate `r` uses `seed + r`.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// `grid:ROWSxCOLS` or an edge-list file (study 2 only).
    #[arg(long, default_value = "grid:10x10")]
    pub graph: String,
    /// Cluster specification file (study 1); defaults to the built-in reconstruction.
    #[arg(long)]
    pub clusters: Option<PathBuf>,
    /// Spatial association values (study 2), comma separated.
    #[arg(long, value_delimiter = ',', default_value = "10")]
    pub lambda: Vec<f64>,
    /// Scale values `1/φ` (study 2), comma separated.
    #[arg(long = "inv-phi", value_delimiter = ',', default_value = "1")]
    pub inv_phi: Vec<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// Model names, comma separated: M1, M1A, M1B, M1C, M2, M3, M4, M5 (NP), M6, M6A, BYM (CAR).
    #[arg(long, value_delimiter = ',')]
    pub model: Vec<String>,
    /// Dataset CSV, or a directory written by `simulate`.
    #[arg(long)]
    pub data: PathBuf,
    /// `grid:ROWSxCOLS` or an edge-list file; defaults to the graph of a simulated directory.
    #[arg(long)]
    pub graph: Option<String>,
    /// Total sweeps including burn-in.
    #[arg(long, default_value_t = 15_000)]
    pub iters: usize,
    #[arg(long, default_value_t = 10_000)]
    pub burnin: usize,
    #[arg(long, default_value_t = 1)]
    pub thin: usize,
    #[arg(long, default_value_t = 30)]
    pub truncation: usize,
    /// Base seed; replicate `r` uses `seed + r`.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Fit only the first this many replicates of a simulated directory.
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Upper bound of the uniform prior on the spatial association.
    #[arg(long = "lambda-max", default_value_t = 50.0)]
    pub lambda_max: f64,
    /// Supplies the default model list for a design.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Directory written by `simulate` (holds the truth sidecars).
    #[arg(long)]
    pub data: PathBuf,
    /// Directory written by `fit`.
    #[arg(long)]
    pub fits: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the design recorded in the simulated directory.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
}
