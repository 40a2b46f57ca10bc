//! `coda`: active model selection from the command line.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data or I/O error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "coda", version, about = "Consensus-driven active model selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate selection on a labeled benchmark and write a report.
    Run(RunArgs),
    /// Sweep prior modes and acquisition methods, one report per pair.
    Ablate(AblateArgs),
    /// Pick a model from the prior alone, without labels.
    Unsupervised(UnsupervisedArgs),
    /// Generate a synthetic benchmark from an accuracy profile.
    Synth(SynthArgs),
    /// Check a benchmark for malformed rows and class coverage.
    Validate(ValidateArgs),
    /// Serve labeling sessions over HTTP. Reads the bearer token from CODA_TOKEN.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Eig,
    Random,
    Uncertainty,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SelectorArg {
    /// Argmax of the probability of being best.
    Pbest,
    /// Highest accuracy on the labels seen so far.
    Risk,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PriorArg {
    Consensus,
    Diagonal,
    Uniform,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
    Both,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PredictionFormatArg {
    F32le,
    Csv,
}

/// Settings shared by `run` and `ablate`. Unset flags fall back to `--config`,
/// then to the built-in defaults shown.
#[derive(Debug, Args)]
struct TuningArgs {
    /// Benchmark manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
    /// Label budget per run [default: 100]
    #[arg(long)]
    budget: Option<usize>,
    /// Number of seeds; runs use seeds 0..N [default: 5]
    #[arg(long)]
    seeds: Option<u64>,
    /// Consensus weight of the prior [default: 0.1]
    #[arg(long)]
    alpha: Option<f64>,
    /// Prior temperature; smaller is stronger [default: 0.5]
    #[arg(long)]
    temp: Option<f64>,
    /// Pseudo-count of a soft label update [default: 0.01]
    #[arg(long)]
    eta: Option<f64>,
    /// Quadrature nodes on [0, 1] [default: 2049]
    #[arg(long)]
    grid: Option<usize>,
    /// Keep the class marginal at its initial value
    #[arg(long)]
    freeze_marginal: bool,
    /// Worker threads across seeds [default: available cores]
    #[arg(long)]
    jobs: Option<usize>,
    /// Base run config (JSON, same shape as `config` in summary.json)
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    tuning: TuningArgs,
    /// Acquisition function [default: eig]
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// How the current best model is named [default: pbest]
    #[arg(long, value_enum)]
    selector: Option<SelectorArg>,
    /// Prior construction [default: consensus]
    #[arg(long, value_enum)]
    prior: Option<PriorArg>,
    /// Output directory
    #[arg(long, default_value = "coda-report")]
    out: PathBuf,
    /// Report files to write
    #[arg(long, value_enum, default_value = "both")]
    format: FormatArg,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[command(flatten)]
    tuning: TuningArgs,
    /// Prior modes to sweep
    #[arg(long, value_enum, value_delimiter = ',', default_value = "consensus,diagonal,uniform")]
    priors: Vec<PriorArg>,
    /// Acquisition methods to sweep
    #[arg(long, value_enum, value_delimiter = ',', default_value = "eig,random,uncertainty")]
    methods: Vec<MethodArg>,
    /// How the current best model is named [default: pbest]
    #[arg(long, value_enum)]
    selector: Option<SelectorArg>,
    /// Output directory; one subdirectory per prior and method plus ablation.csv
    #[arg(long, default_value = "coda-ablation")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct UnsupervisedArgs {
    /// Benchmark manifest (JSON); labels are optional
    #[arg(long)]
    manifest: PathBuf,
    /// Prior construction
    #[arg(long, value_enum, default_value = "consensus")]
    prior: PriorArg,
    /// Consensus weight of the prior
    #[arg(long, default_value_t = coda_core::belief::DEFAULT_ALPHA)]
    alpha: f64,
    /// Prior temperature
    #[arg(long, default_value_t = coda_core::belief::DEFAULT_TEMPERATURE)]
    temp: f64,
    /// Pseudo-count of a soft label update
    #[arg(long, default_value_t = coda_core::belief::DEFAULT_ETA)]
    eta: f64,
    /// Quadrature nodes on [0, 1]
    #[arg(long, default_value_t = coda_core::pbest::DEFAULT_GRID_SIZE)]
    grid: usize,
    /// Also write the JSON result here
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Number of models [default: length of the profile, else 5]
    #[arg(long)]
    models: Option<usize>,
    /// Number of items
    #[arg(long, default_value_t = 1000)]
    items: usize,
    /// Number of classes
    #[arg(long, default_value_t = 5)]
    classes: usize,
    /// Generator seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON `{"accuracies": [...], "class_prevalence": [...], "sharpness": s}`;
    /// without it accuracies are evenly spaced from chance + 0.1 to 0.9
    #[arg(long)]
    accuracy_profile: Option<PathBuf>,
    /// Softness of emitted scores; `inf` emits one-hot rows [default: profile value, else 5]
    #[arg(long)]
    sharpness: Option<f64>,
    /// Prediction file format
    #[arg(long, value_enum, default_value = "f32le")]
    format: PredictionFormatArg,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// Benchmark manifest (JSON)
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Listen address
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
    /// Session storage directory
    #[arg(long, default_value = "coda-sessions")]
    data: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => commands::run(args),
        Command::Ablate(args) => commands::ablate(args),
        Command::Unsupervised(args) => commands::unsupervised(args),
        Command::Synth(args) => commands::synth(args),
        Command::Validate(args) => commands::validate(args),
        Command::Serve(args) => commands::serve(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
