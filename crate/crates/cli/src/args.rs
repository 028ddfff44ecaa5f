use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Covariance estimation from shifted, noisy observations.
///
/// Exit codes: 0 ok, 2 usage, 3 IO, 4 Condition 1 warning under --strict,
/// 5 under-determined rank, 6 every benchmark cell failed.
#[derive(Debug, Parser)]
#[command(name = "mrfa", version)]
pub struct Cli {
    /// Print solver diagnostics to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample observations and write them with a model sidecar.
    Simulate(SimulateArgs),
    /// Estimate the power spectrum and trispectrum of a dump.
    Moments(MomentsArgs),
    /// Run both estimation steps.
    Estimate(EstimateArgs),
    /// Check the identifiability condition for a model.
    Condition(ConditionArgs),
    /// Build the full-rank moment-matching counterexample.
    Counterexample(CounterexampleArgs),
    /// Error as a function of the number of observations.
    BenchN(BenchArgs),
    /// Error over a rank / length grid.
    BenchGrid(BenchArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FieldArg {
    Real,
    Complex,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    /// Uniform eigenvalues and factors drawn uniformly from the sphere.
    Random,
    /// Local-cosine atoms on a 16-sample window.
    LocalCosine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Dense,
    Cg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AggregationArg {
    Mean,
    Max,
    Median,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long = "L")]
    pub len: usize,
    #[arg(long = "r")]
    pub rank: usize,
    #[arg(long, default_value_t = 0.0)]
    pub sigma2: f64,
    #[arg(long = "N")]
    pub n: usize,
    #[arg(long, value_enum, default_value = "complex")]
    pub field: FieldArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "random")]
    pub model: ModelKind,
    /// Comma-separated eigenvalues, non-increasing; overrides the random draw.
    #[arg(long, value_delimiter = ',')]
    pub eigenvalues: Option<Vec<f64>>,
    /// Write Fourier-domain observations instead of time-domain ones.
    #[arg(long)]
    pub fourier: bool,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct MomentsArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Also write a JSON export (L <= 12).
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Observation dump.
    #[arg(short, long, required_unless_present = "from_model")]
    pub input: Option<PathBuf>,
    /// Noise variance; defaults to the value in the model sidecar.
    #[arg(long)]
    pub sigma2: Option<f64>,
    /// Model sidecar for scoring; defaults to `<input stem>.model.json`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Model file to estimate from; combine with --exact.
    #[arg(long)]
    pub from_model: Option<PathBuf>,
    /// Use the exact moments of --from-model instead of observations.
    #[arg(long, requires = "from_model")]
    pub exact: bool,
    /// Rank handed to the phase retrieval; defaults to the largest r with
    /// r^2 < L.
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long, value_enum, default_value = "cg")]
    pub method: MethodArg,
    #[arg(long, default_value_t = 5000)]
    pub max_iters: usize,
    /// Fail with exit code 4 when the singular gap is too small.
    #[arg(long)]
    pub strict: bool,
    /// Output prefix.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConditionArgs {
    /// Model file; otherwise a random model is drawn.
    #[arg(long)]
    pub from_model: Option<PathBuf>,
    #[arg(long = "L")]
    pub len: Option<usize>,
    #[arg(long = "r")]
    pub rank: Option<usize>,
    #[arg(long, value_enum, default_value = "complex")]
    pub field: FieldArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct CounterexampleArgs {
    #[arg(long = "L", default_value_t = 6)]
    pub len: usize,
    #[arg(long, default_value_t = 0.05)]
    pub phi: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the constructed matrix as a block file.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Lengths as a list (`6,9,10`) or inclusive range (`6:12`).
    #[arg(long = "L")]
    pub lengths: String,
    /// Ranks as a list or inclusive range.
    #[arg(long = "r")]
    pub ranks: String,
    #[arg(long = "N", value_delimiter = ',', num_args = 0..)]
    pub n: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub sigma2: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long, value_enum, default_value = "complex")]
    pub field: FieldArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Defaults to mean for bench-n and max for bench-grid.
    #[arg(long, value_enum)]
    pub aggregation: Option<AggregationArg>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output prefix for `<prefix>.csv` and `<prefix>.json`.
    #[arg(short, long)]
    pub output: PathBuf,
}
