use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use coda_core::acquisition::AcquisitionKind;
use coda_core::belief::{PriorConfig, PriorMode};
use coda_core::benchmark::{generate_synthetic, load_benchmark, save_benchmark, BenchmarkTask, PredictionFormat, SyntheticSpec};
use coda_core::harness::{
    aggregate, export_report, run_seeds, run_unsupervised, write_atomic, HarnessError, Report, ReportFormat, RunConfig,
    SelectorKind, Summary, Timing,
};
use serde::{Deserialize, Serialize};

use crate::{
    AblateArgs, FormatArg, MethodArg, PredictionFormatArg, PriorArg, RunArgs, SelectorArg, ServeArgs, SynthArgs,
    TuningArgs, UnsupervisedArgs, ValidateArgs,
};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config files or profiles.
    Config(String),
    /// Unreadable or malformed benchmark data, or failed writes.
    Data(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Data(m) => f.write_str(m),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::InvalidConfig(_) | HarnessError::Belief(_) | HarnessError::PBest(_) => {
                CliError::Config(e.to_string())
            }
            HarnessError::MissingLabels
            | HarnessError::MismatchedRuns(_)
            | HarnessError::Engine(_)
            | HarnessError::Io { .. } => CliError::Data(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

impl From<MethodArg> for AcquisitionKind {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Eig => AcquisitionKind::Eig,
            MethodArg::Random => AcquisitionKind::Random,
            MethodArg::Uncertainty => AcquisitionKind::Uncertainty,
        }
    }
}

impl From<SelectorArg> for SelectorKind {
    fn from(s: SelectorArg) -> Self {
        match s {
            SelectorArg::Pbest => SelectorKind::Pbest,
            SelectorArg::Risk => SelectorKind::EmpiricalRisk,
        }
    }
}

impl From<PriorArg> for PriorMode {
    fn from(p: PriorArg) -> Self {
        match p {
            PriorArg::Consensus => PriorMode::Consensus,
            PriorArg::Diagonal => PriorMode::Diagonal,
            PriorArg::Uniform => PriorMode::Uniform,
        }
    }
}

fn load(manifest: &Path) -> Result<BenchmarkTask> {
    load_benchmark(manifest).map_err(|e| CliError::Data(e.to_string()))
}

fn base_config(t: &TuningArgs) -> Result<RunConfig> {
    let mut config = match &t.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(b) = t.budget {
        config.budget = b;
    }
    if let Some(n) = t.seeds {
        config.seeds = (0..n).collect();
    }
    if let Some(a) = t.alpha {
        config.prior.alpha = a;
    }
    if let Some(temp) = t.temp {
        config.prior.temperature = temp;
    }
    if let Some(eta) = t.eta {
        config.eta = eta;
    }
    if let Some(g) = t.grid {
        config.grid_size = g;
    }
    if t.freeze_marginal {
        config.freeze_marginal = true;
    }
    Ok(config)
}

fn jobs(t: &TuningArgs) -> Result<usize> {
    match t.jobs {
        Some(0) => Err(CliError::Config("--jobs must be at least 1".into())),
        Some(j) => Ok(j),
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn simulate(task: &BenchmarkTask, name: &str, config: RunConfig, jobs: usize) -> Result<Report> {
    config.validate(task.num_items())?;
    let start = Instant::now();
    let runs = run_seeds(task, &config, jobs)?;
    let summary = aggregate(&runs, task)?;
    let timing = Timing::from_runs(&runs, start.elapsed().as_secs_f64());
    Ok(Report::new(name, config, summary, timing))
}

fn describe(summary: &Summary) -> String {
    format!(
        "cumulative regret {:.3}, final regret {:.3}, success {:.2}, near-optimal {:.2}",
        summary.final_cumulative_regret, summary.final_regret, summary.final_success_rate, summary.final_near_optimal_rate
    )
}

pub fn run(args: RunArgs) -> Result<()> {
    let mut config = base_config(&args.tuning)?;
    if let Some(m) = args.method {
        config.method.kind = m.into();
    }
    if let Some(s) = args.selector {
        config.selector = s.into();
    }
    if let Some(p) = args.prior {
        config.prior.mode = p.into();
    }
    let jobs = jobs(&args.tuning)?;
    let task = load(&args.tuning.manifest)?;
    let report = simulate(&task, &args.tuning.manifest.display().to_string(), config, jobs)?;
    let format = match args.format {
        FormatArg::Csv => ReportFormat::Csv,
        FormatArg::Json => ReportFormat::Json,
        FormatArg::Both => ReportFormat::Both,
    };
    let written = export_report(&report, &args.out, format)?;
    println!("{}", describe(&report.summary));
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

pub fn ablate(args: AblateArgs) -> Result<()> {
    let mut base = base_config(&args.tuning)?;
    if let Some(s) = args.selector {
        base.selector = s.into();
    }
    let jobs = jobs(&args.tuning)?;
    let task = load(&args.tuning.manifest)?;
    let name = args.tuning.manifest.display().to_string();
    let mut table = String::from(
        "prior,method,final_cumulative_regret,final_regret,final_success_rate,final_near_optimal_rate\n",
    );
    for &prior in &args.priors {
        for &method in &args.methods {
            let mut config = base.clone();
            config.prior.mode = prior.into();
            config.method.kind = method.into();
            let label = format!("{}_{}", config.prior.mode, config.method.kind);
            let report = simulate(&task, &name, config, jobs)?;
            export_report(&report, &args.out.join(&label), ReportFormat::Both)?;
            let s = &report.summary;
            table.push_str(&format!(
                "{},{},{},{},{},{}\n",
                report.config.prior.mode,
                report.config.method.kind,
                s.final_cumulative_regret,
                s.final_regret,
                s.final_success_rate,
                s.final_near_optimal_rate
            ));
            println!("{label}: {}", describe(s));
        }
    }
    let path = args.out.join("ablation.csv");
    write_atomic(&path, table.as_bytes())?;
    println!("wrote {}", path.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct UnsupervisedOutput {
    manifest: PathBuf,
    chosen_model: usize,
    chosen_model_id: String,
    model_ids: Vec<String>,
    pbest: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    regret_at_0: Option<f64>,
}

pub fn unsupervised(args: UnsupervisedArgs) -> Result<()> {
    let prior = PriorConfig {
        alpha: args.alpha,
        temperature: args.temp,
        mode: args.prior.into(),
    };
    let task = load(&args.manifest)?;
    let choice = run_unsupervised(&task, &prior, args.eta, args.grid)?;
    let out = UnsupervisedOutput {
        manifest: args.manifest,
        chosen_model: choice.chosen,
        chosen_model_id: task.model_ids()[choice.chosen].clone(),
        model_ids: task.model_ids().to_vec(),
        pbest: choice.pbest,
        regret_at_0: choice.regret_at_0,
    };
    let mut json = serde_json::to_string_pretty(&out).map_err(|e| CliError::Data(e.to_string()))?;
    json.push('\n');
    if let Some(path) = &args.out {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
        }
        write_atomic(path, json.as_bytes())?;
    }
    eprintln!("chosen model: {}", out.chosen_model_id);
    print!("{json}");
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AccuracyProfile {
    accuracies: Vec<f64>,
    #[serde(default)]
    class_prevalence: Option<Vec<f64>>,
    #[serde(default)]
    sharpness: Option<f64>,
}

const DEFAULT_SYNTH_MODELS: usize = 5;
const DEFAULT_SHARPNESS: f64 = 5.0;

fn spaced_accuracies(models: usize, classes: usize) -> Vec<f64> {
    let lo = 1.0 / classes as f64 + 0.1;
    let hi = 0.9f64.max(lo);
    if models == 1 {
        return vec![hi];
    }
    (0..models).map(|k| lo + (hi - lo) * k as f64 / (models - 1) as f64).collect()
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let profile = match &args.accuracy_profile {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let p: AccuracyProfile = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("invalid accuracy profile {}: {e}", path.display())))?;
            Some(p)
        }
        None => None,
    };
    let accuracies = match &profile {
        Some(p) => {
            if let Some(n) = args.models.filter(|&n| n != p.accuracies.len()) {
                return Err(CliError::Config(format!(
                    "--models {n} disagrees with {} accuracies in the profile",
                    p.accuracies.len()
                )));
            }
            p.accuracies.clone()
        }
        None => spaced_accuracies(args.models.unwrap_or(DEFAULT_SYNTH_MODELS), args.classes),
    };
    let sharpness = args
        .sharpness
        .or(profile.as_ref().and_then(|p| p.sharpness))
        .unwrap_or(DEFAULT_SHARPNESS);
    let mut spec = SyntheticSpec::from_accuracies(&accuracies, args.items, args.classes, sharpness, args.seed);
    if let Some(prevalence) = profile.and_then(|p| p.class_prevalence) {
        spec.class_prevalence = prevalence;
    }
    let task = generate_synthetic(&spec).map_err(|e| CliError::Config(e.to_string()))?;
    let format = match args.format {
        PredictionFormatArg::F32le => PredictionFormat::F32le,
        PredictionFormatArg::Csv => PredictionFormat::Csv,
    };
    let manifest = save_benchmark(&task, &args.out, format).map_err(|e| CliError::Data(e.to_string()))?;
    println!("{}", manifest.display());
    Ok(())
}

pub fn validate(args: ValidateArgs) -> Result<()> {
    let task = load(&args.manifest)?;
    let report = coda_core::benchmark::validate(&task);
    println!("{}", serde_json::to_string_pretty(&report).map_err(|e| CliError::Data(e.to_string()))?);
    if report.is_clean() {
        Ok(())
    } else {
        Err(CliError::Data(format!(
            "{} normalization violations, {} warnings",
            report.normalization_violations.len(),
            report.warnings.len()
        )))
    }
}

pub fn serve(args: ServeArgs) -> Result<()> {
    let config = coda_service::ServiceConfig {
        data_dir: args.data,
        token: std::env::var(coda_service::TOKEN_ENV).ok().filter(|t| !t.is_empty()),
    };
    let app = coda_service::app(&config).map_err(|e| CliError::Data(e.to_string()))?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Data(e.to_string()))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&args.addr)
            .await
            .map_err(|e| CliError::Data(format!("cannot listen on {}: {e}", args.addr)))?;
        let local = listener.local_addr().map_err(|e| CliError::Data(e.to_string()))?;
        eprintln!("listening on http://{local}");
        coda_service::serve(listener, app)
            .await
            .map_err(|e| CliError::Data(e.to_string()))
    })
}
