//! Argument definitions and command dispatch for the `neurongauge` binary.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use neurongauge_core::aggregation::{DEFAULT_BETA, DEFAULT_ETA};
use neurongauge_core::estimator::{Strategy, DEFAULT_EPSILON};
use neurongauge_core::simulator::DEFAULT_COST_PER_RATING;
use neurongauge_core::ErrorClass;
use serde::Serialize;

pub mod commands;
mod labels;
pub mod manifest;

pub use commands::run;

#[derive(Debug, Parser)]
#[command(name = "neurongauge", version, about = "Cheap, unbiased correlation scores for neuron explanations")]
pub struct Cli {
    /// Worker threads for simulation trials (defaults to all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Where to write the run manifest. Defaults to `<out>.manifest.json`.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic benchmark (activations, ground truth, guide) as CSV.
    Generate(GenerateArgs),
    /// Build a sampling plan for one neuron and draw the inputs to label.
    Plan(PlanArgs),
    /// Estimate a neuron-concept correlation from labels on a drawn sample.
    Estimate(EstimateArgs),
    /// Run a simulated cost-error sweep described by a JSON config.
    Simulate(SimulateArgs),
    /// Run a cost-error sweep from flags, or a prior sweep with --betas.
    Sweep(SweepArgs),
    /// Score explanations by correlating predicted with actual activations.
    Score(ScoreArgs),
    /// Turn a ratings log into one label per input.
    Aggregate(AggregateArgs),
    /// Estimate the rater error rate from ratings on inputs with known truth.
    Calibrate(CalibrateArgs),
    /// Run the annotation HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorArg {
    Uniform,
    Estimator,
}

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub bench: BenchArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BenchArgs {
    #[arg(id = "bench_size", long = "bench-size", default_value_t = 50_000)]
    pub size: usize,
    #[arg(id = "bench_neurons", long = "bench-neurons", default_value_t = 5)]
    pub neurons: usize,
    #[arg(id = "bench_prevalence", long = "bench-prevalence", default_value_t = 0.01)]
    pub prevalence: f64,
    #[arg(id = "bench_seed", long = "bench-seed", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SampleArgs {
    #[arg(long, default_value_t = Strategy::Guided)]
    pub strategy: Strategy,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long = "n-inputs", default_value_t = 90)]
    pub n_inputs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct PlanArgs {
    #[arg(long)]
    pub activations: PathBuf,
    /// Neuron column; may be omitted when the file has one.
    #[arg(long)]
    pub neuron: Option<String>,
    /// Cheap-estimator scores, needed by the guided strategy.
    #[arg(long)]
    pub guide: Option<PathBuf>,
    /// Ground-truth labels, needed by the oracle strategy.
    #[arg(long)]
    pub concepts: Option<PathBuf>,
    /// Concept column in the guide or ground-truth file.
    #[arg(long)]
    pub concept: Option<String>,
    #[command(flatten)]
    pub sample: SampleArgs,
    /// Plan file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EstimateArgs {
    #[arg(long)]
    pub activations: PathBuf,
    #[arg(long)]
    pub neuron: Option<String>,
    /// CSV `input_id,<concept>` of labels in [0, 1]; inputs without a value count as unlabeled.
    #[arg(long)]
    pub labels: PathBuf,
    /// Plan written by `plan`. Without it a sample is drawn from the flags below.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long)]
    pub guide: Option<PathBuf>,
    #[arg(long)]
    pub concepts: Option<PathBuf>,
    /// Column to read from the labels and guide files.
    #[arg(long)]
    pub concept: Option<String>,
    #[command(flatten)]
    pub sample: SampleArgs,
    /// Also write the JSON result here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// JSON sweep description.
    #[arg(long)]
    pub config: PathBuf,
    /// Workspace files; when omitted the config's `benchmark` section is generated.
    #[arg(long)]
    pub activations: Option<PathBuf>,
    #[arg(long)]
    pub concepts: Option<PathBuf>,
    #[arg(long)]
    pub guide: Option<PathBuf>,
    /// Overrides `base.n_trials`.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Overrides `base.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    #[arg(long)]
    pub activations: Option<PathBuf>,
    #[arg(long)]
    pub concepts: Option<PathBuf>,
    #[arg(long)]
    pub guide: Option<PathBuf>,
    #[command(flatten)]
    pub bench: BenchArgs,
    #[arg(long, value_delimiter = ',', default_values_t = Strategy::ALL)]
    pub strategy: Vec<Strategy>,
    /// average, majority, bayes (prior from --prior), bayes-uniform or bayes-estimator.
    #[arg(long, value_delimiter = ',', default_value = "bayes")]
    pub aggregation: Vec<String>,
    #[arg(long, value_enum, default_value_t = PriorArg::Estimator)]
    pub prior: PriorArg,
    #[arg(long, default_value_t = DEFAULT_BETA)]
    pub beta: f64,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    pub raters: Vec<usize>,
    #[arg(long = "n-inputs", value_delimiter = ',', default_value = "30,90,270")]
    pub n_inputs: Vec<usize>,
    /// Ratings per neuron; replaces --n-inputs with inputs = ratings / raters.
    #[arg(long, value_delimiter = ',')]
    pub ratings: Option<Vec<usize>>,
    #[arg(long, default_value_t = DEFAULT_ETA)]
    pub eta: f64,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "cost-per-rating", default_value_t = DEFAULT_COST_PER_RATING)]
    pub cost_per_rating: f64,
    /// Print the best cell per strategy and aggregation within this per-neuron budget (USD).
    #[arg(long)]
    pub budget: Option<f64>,
    /// Sweep the constant prior instead; uses the first strategy, rater count and input count.
    #[arg(long, value_delimiter = ',')]
    pub betas: Option<Vec<f64>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ScoreArgs {
    /// JSON Lines of `{"neuron_id", "explanation"}`.
    #[arg(long)]
    pub explanations: PathBuf,
    #[arg(long)]
    pub concepts: PathBuf,
    #[arg(long)]
    pub activations: PathBuf,
    /// Evaluation split: one input id per line.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Scores CSV; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct AggregateArgs {
    /// Ratings log (JSON Lines).
    #[arg(long)]
    pub ratings: PathBuf,
    /// Supplies the input index when no guide is given.
    #[arg(long)]
    pub activations: Option<PathBuf>,
    #[arg(long)]
    pub guide: Option<PathBuf>,
    /// Concept to aggregate when the log holds several.
    #[arg(long)]
    pub concept: Option<String>,
    /// average, majority, bayes (prior from --prior), bayes-uniform or bayes-estimator.
    #[arg(long, default_value = "bayes")]
    pub method: String,
    #[arg(long, value_enum, default_value_t = PriorArg::Estimator)]
    pub prior: PriorArg,
    #[arg(long, default_value_t = DEFAULT_BETA)]
    pub beta: f64,
    #[arg(long, default_value_t = DEFAULT_ETA)]
    pub eta: f64,
    /// Labels CSV; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub ratings: PathBuf,
    /// Ground-truth labels for the calibration inputs.
    #[arg(long)]
    pub concepts: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ServeArgs {
    #[arg(long)]
    pub activations: PathBuf,
    #[arg(long)]
    pub guide: Option<PathBuf>,
    #[arg(long)]
    pub concepts: Option<PathBuf>,
    /// Directory holding session manifests and rating logs.
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
    #[arg(long = "lease-minutes", default_value_t = 10)]
    pub lease_minutes: i64,
}

pub fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Io => 2,
        ErrorClass::Validation => 3,
        ErrorClass::Degenerate => 4,
        ErrorClass::Config => 5,
    }
}
