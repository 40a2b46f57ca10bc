//! Benchmark simulation: run the selection loop against oracle labels, track
//! regret, and aggregate across seeds.

mod report;

pub use report::{export_report, load_summary, Report, ReportFormat, Timing, REGRET_UNITS, REPORT_CSV, SUMMARY_JSON, write_atomic};

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::{AcquisitionKind, AcquisitionMethod};
use crate::belief::{prior_for_task, BeliefError, PriorConfig, DEFAULT_ETA};
use crate::benchmark::BenchmarkTask;
use crate::engine::{EngineConfig, EngineError, SelectionEngine};
use crate::pbest::{class_marginal, compute_pbest, select_model, PBestError, DEFAULT_GRID_SIZE};

pub const DEFAULT_BUDGET: usize = 100;
pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
/// A choice within this many accuracy points of the best counts as near-optimal.
pub const NEAR_OPTIMAL_POINTS: f64 = 1.0;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("task has no oracle labels")]
    MissingLabels,
    #[error("invalid run config: {0}")]
    InvalidConfig(String),
    #[error("runs disagree: {0}")]
    MismatchedRuns(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error(transparent)]
    PBest(#[from] PBestError),
    #[error("report i/o error at {path}: {message}")]
    Io { path: String, message: String },
}

/// How the harness names its current best model at each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectorKind {
    /// Argmax of `P_Best`.
    Pbest,
    /// Highest accuracy on the labels collected so far; ties broken at random.
    EmpiricalRisk,
}

impl std::fmt::Display for SelectorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SelectorKind::Pbest => "pbest",
            SelectorKind::EmpiricalRisk => "empirical_risk",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub method: AcquisitionMethod,
    pub selector: SelectorKind,
    pub budget: usize,
    pub prior: PriorConfig,
    pub eta: f64,
    pub grid_size: usize,
    pub seeds: Vec<u64>,
    pub freeze_marginal: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: AcquisitionMethod::new(AcquisitionKind::Eig),
            selector: SelectorKind::Pbest,
            budget: DEFAULT_BUDGET,
            prior: PriorConfig::default(),
            eta: DEFAULT_ETA,
            grid_size: DEFAULT_GRID_SIZE,
            seeds: DEFAULT_SEEDS.to_vec(),
            freeze_marginal: false,
        }
    }
}

impl RunConfig {
    /// Checks the config on its own and against a task of `num_items` items.
    pub fn validate(&self, num_items: usize) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidConfig(m));
        if self.budget < 1 {
            return bad("budget must be at least 1".into());
        }
        if self.budget > num_items {
            return bad(format!("budget {} exceeds pool size {num_items}", self.budget));
        }
        if self.grid_size < 3 {
            return bad(format!("grid size must be at least 3, got {}", self.grid_size));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be positive, got {}", self.eta));
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        self.prior.validate().or_else(|e| bad(e.to_string()))
    }

    /// True when the seed cannot influence a run, so every seed yields the
    /// same trajectory.
    pub fn is_seed_independent(&self) -> bool {
        self.selector == SelectorKind::Pbest && !self.method.uses_seed()
    }

    fn engine_config(&self, seed: u64) -> EngineConfig {
        EngineConfig {
            method: AcquisitionMethod {
                rng_seed: seed,
                ..self.method
            },
            prior: self.prior,
            eta: self.eta,
            grid_size: self.grid_size,
            freeze_marginal: self.freeze_marginal,
        }
    }
}

/// Per-model accuracy over the full pool and the best model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueBest {
    pub best: usize,
    pub correct: Vec<usize>,
    pub accuracies: Vec<f64>,
    pub num_items: usize,
}

impl TrueBest {
    /// Accuracy gap to the best model, in percentage points.
    pub fn regret(&self, chosen: usize) -> f64 {
        regret_points(self.correct[self.best], self.correct[chosen], self.num_items)
    }

    pub fn is_best(&self, chosen: usize) -> bool {
        self.correct[chosen] == self.correct[self.best]
    }

    pub fn is_near_optimal(&self, chosen: usize) -> bool {
        let gap = self.correct[self.best].saturating_sub(self.correct[chosen]);
        (gap as f64) * 100.0 <= NEAR_OPTIMAL_POINTS * self.num_items as f64
    }
}

fn regret_points(best_correct: usize, chosen_correct: usize, num_items: usize) -> f64 {
    (best_correct as f64 - chosen_correct as f64) * 100.0 / num_items as f64
}

/// 0/1-loss accuracy of each model's hard predictions against the oracle
/// labels; the best model is the lowest index among the most accurate.
pub fn true_best(task: &BenchmarkTask) -> Result<TrueBest, HarnessError> {
    let labels = task.oracle_labels().ok_or(HarnessError::MissingLabels)?;
    let correct: Vec<usize> = (0..task.num_models())
        .map(|k| {
            labels
                .iter()
                .enumerate()
                .filter(|&(i, &y)| task.hard_prediction(k, i) == y)
                .count()
        })
        .collect();
    let mut best = 0;
    for (k, &n) in correct.iter().enumerate() {
        if n > correct[best] {
            best = k;
        }
    }
    let d = task.num_items() as f64;
    Ok(TrueBest {
        best,
        accuracies: correct.iter().map(|&n| n as f64 / d).collect(),
        correct,
        num_items: task.num_items(),
    })
}

/// `accuracy(best) - accuracy(chosen)` in percentage points.
pub fn regret_at(task: &BenchmarkTask, chosen: usize, best: usize) -> Result<f64, HarnessError> {
    let tb = true_best(task)?;
    Ok(regret_points(tb.correct[best], tb.correct[chosen], tb.num_items))
}

/// One simulated labeling trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRun {
    pub seed: u64,
    pub queried_items: Vec<usize>,
    pub chosen_models: Vec<usize>,
    /// Percentage points.
    pub regret: Vec<f64>,
    pub cumulative_regret: Vec<f64>,
    pub pbest_trace: Vec<Vec<f64>>,
    pub wall_time_per_step: Vec<f64>,
    pub pbest_evaluations_per_step: Vec<usize>,
}

/// Simulates `config.budget` steps. At each step the model choice is taken
/// from the beliefs before that step's label is revealed.
pub fn run_selection(task: &BenchmarkTask, config: &RunConfig, seed: u64) -> Result<SelectionRun, HarnessError> {
    let labels = task.oracle_labels().ok_or(HarnessError::MissingLabels)?;
    config.validate(task.num_items())?;
    let best = true_best(task)?;
    let mut engine = SelectionEngine::new(task, config.engine_config(seed))?;
    let mut tie_rng = ChaCha8Rng::seed_from_u64(seed);
    tie_rng.set_stream(u64::MAX);
    let mut labeled_correct = vec![0usize; task.num_models()];

    let budget = config.budget;
    let mut run = SelectionRun {
        seed,
        queried_items: Vec::with_capacity(budget),
        chosen_models: Vec::with_capacity(budget),
        regret: Vec::with_capacity(budget),
        cumulative_regret: Vec::with_capacity(budget),
        pbest_trace: Vec::with_capacity(budget),
        wall_time_per_step: Vec::with_capacity(budget),
        pbest_evaluations_per_step: Vec::with_capacity(budget),
    };
    let mut cumulative = 0.0;
    for _ in 0..budget {
        let started = Instant::now();
        let pbest = engine.pbest(task)?;
        let chosen = match config.selector {
            SelectorKind::Pbest => select_model(&pbest),
            SelectorKind::EmpiricalRisk => empirical_risk_choice(&labeled_correct, &mut tie_rng),
        };
        let regret = best.regret(chosen);
        cumulative += regret;

        let query = engine.next_query(task)?;
        let truth = labels[query.item];
        engine.observe(task, query.item, truth)?;
        for (k, n) in labeled_correct.iter_mut().enumerate() {
            if task.hard_prediction(k, query.item) == truth {
                *n += 1;
            }
        }

        run.chosen_models.push(chosen);
        run.regret.push(regret);
        run.cumulative_regret.push(cumulative);
        run.queried_items.push(query.item);
        run.pbest_trace.push(pbest.probs);
        run.pbest_evaluations_per_step
            .push(query.stats.map_or(0, |s| s.pbest_evaluations) + 1);
        run.wall_time_per_step.push(started.elapsed().as_secs_f64());
    }
    Ok(run)
}

fn empirical_risk_choice(correct: &[usize], rng: &mut ChaCha8Rng) -> usize {
    let top = *correct.iter().max().expect("at least one model");
    let leaders: Vec<usize> = (0..correct.len()).filter(|&k| correct[k] == top).collect();
    if leaders.len() == 1 {
        leaders[0]
    } else {
        leaders[rng.random_range(0..leaders.len())]
    }
}

/// Runs every seed in `config.seeds`, on up to `jobs` threads.
///
/// Seed-independent configurations are simulated once and the trajectory
/// is shared by all seeds.
pub fn run_seeds(task: &BenchmarkTask, config: &RunConfig, jobs: usize) -> Result<Vec<SelectionRun>, HarnessError> {
    config.validate(task.num_items())?;
    if config.is_seed_independent() {
        let first = run_selection(task, config, config.seeds[0])?;
        return Ok(config
            .seeds
            .iter()
            .map(|&seed| SelectionRun { seed, ..first.clone() })
            .collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
    pool.install(|| {
        config
            .seeds
            .par_iter()
            .map(|&seed| run_selection(task, config, seed))
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnsupervisedChoice {
    pub chosen: usize,
    pub pbest: Vec<f64>,
    /// Present when the task carries oracle labels.
    pub regret_at_0: Option<f64>,
}

/// Selects a model from the consensus prior alone, without any labels.
pub fn run_unsupervised(
    task: &BenchmarkTask,
    prior: &PriorConfig,
    eta: f64,
    grid_size: usize,
) -> Result<UnsupervisedChoice, HarnessError> {
    let belief = prior_for_task(task, prior, eta)?;
    let marginal = class_marginal(task, &belief);
    let pbest = compute_pbest(&belief, &marginal, grid_size)?;
    let chosen = select_model(&pbest);
    let regret_at_0 = match task.oracle_labels() {
        Some(_) => Some(true_best(task)?.regret(chosen)),
        None => None,
    };
    Ok(UnsupervisedChoice {
        chosen,
        pbest: pbest.probs,
        regret_at_0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub step: usize,
    pub mean_regret: f64,
    pub std_regret: f64,
    pub mean_cum_regret: f64,
    pub std_cum_regret: f64,
    pub success_rate: f64,
    pub near_optimal_rate: f64,
}

/// Per-step statistics across seeds. Standard deviations are population
/// standard deviations (zero for a single run).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub num_runs: usize,
    pub budget: usize,
    pub best_model: usize,
    pub best_accuracy: f64,
    pub steps: Vec<StepSummary>,
    pub final_cumulative_regret: f64,
    pub final_regret: f64,
    pub final_success_rate: f64,
    pub final_near_optimal_rate: f64,
}

pub fn aggregate(runs: &[SelectionRun], task: &BenchmarkTask) -> Result<Summary, HarnessError> {
    let first = runs
        .first()
        .ok_or_else(|| HarnessError::MismatchedRuns("no runs to aggregate".into()))?;
    let budget = first.regret.len();
    if let Some(bad) = runs.iter().find(|r| r.regret.len() != budget || r.chosen_models.len() != budget) {
        return Err(HarnessError::MismatchedRuns(format!(
            "seed {} has {} steps, expected {budget}",
            bad.seed,
            bad.regret.len()
        )));
    }
    let best = true_best(task)?;
    if let Some(bad) = runs
        .iter()
        .flat_map(|r| &r.chosen_models)
        .find(|&&k| k >= task.num_models())
    {
        return Err(HarnessError::MismatchedRuns(format!("model index {bad} out of range")));
    }
    let n = runs.len() as f64;
    let steps: Vec<StepSummary> = (0..budget)
        .map(|t| {
            let (mean_regret, std_regret) = mean_std(runs.iter().map(|r| r.regret[t]));
            let (mean_cum_regret, std_cum_regret) = mean_std(runs.iter().map(|r| r.cumulative_regret[t]));
            let success = runs.iter().filter(|r| best.is_best(r.chosen_models[t])).count() as f64;
            let near = runs.iter().filter(|r| best.is_near_optimal(r.chosen_models[t])).count() as f64;
            StepSummary {
                step: t + 1,
                mean_regret,
                std_regret,
                mean_cum_regret,
                std_cum_regret,
                success_rate: success / n,
                near_optimal_rate: near / n,
            }
        })
        .collect();
    let last = steps.last().cloned();
    Ok(Summary {
        num_runs: runs.len(),
        budget,
        best_model: best.best,
        best_accuracy: best.accuracies[best.best],
        final_cumulative_regret: last.as_ref().map_or(0.0, |s| s.mean_cum_regret),
        final_regret: last.as_ref().map_or(0.0, |s| s.mean_regret),
        final_success_rate: last.as_ref().map_or(0.0, |s| s.success_rate),
        final_near_optimal_rate: last.as_ref().map_or(0.0, |s| s.near_optimal_rate),
        steps,
    })
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
