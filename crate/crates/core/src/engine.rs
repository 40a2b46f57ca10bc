//! The select / query / update loop shared by simulations and live sessions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::{select_next, AcquisitionError, AcquisitionMethod, QueryChoice};
use crate::belief::{prior_for_task, AppliedUpdate, BeliefError, BeliefState, PriorConfig, DEFAULT_ETA};
use crate::benchmark::BenchmarkTask;
use crate::pbest::{class_marginal, ClassMarginal, Marginalizer, PBest, PBestError, PBestEvaluator, DEFAULT_GRID_SIZE};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error(transparent)]
    PBest(#[from] PBestError),
    #[error(transparent)]
    Acquisition(#[from] AcquisitionError),
    #[error("item {0} is already labeled")]
    AlreadyLabeled(usize),
    #[error("item {0} is not labeled")]
    NotLabeled(usize),
}

/// Everything that determines how beliefs evolve and which item is queried.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub method: AcquisitionMethod,
    pub prior: PriorConfig,
    pub eta: f64,
    pub grid_size: usize,
    /// Keep the class marginal from the initial beliefs instead of
    /// re-estimating it after every label.
    pub freeze_marginal: bool,
}

impl EngineConfig {
    pub fn new(method: AcquisitionMethod) -> Self {
        Self {
            method,
            prior: PriorConfig::default(),
            eta: DEFAULT_ETA,
            grid_size: DEFAULT_GRID_SIZE,
            freeze_marginal: false,
        }
    }
}

#[derive(Debug)]
pub struct SelectionEngine {
    config: EngineConfig,
    belief: BeliefState,
    labeled: Vec<bool>,
    labels_applied: usize,
    evaluator: PBestEvaluator,
    frozen_marginal: Option<ClassMarginal>,
}

impl SelectionEngine {
    /// Builds the prior from `task`'s predictions; no labels are used.
    pub fn new(task: &BenchmarkTask, config: EngineConfig) -> Result<Self, EngineError> {
        let belief = prior_for_task(task, &config.prior, config.eta)?;
        let frozen_marginal = config.freeze_marginal.then(|| class_marginal(task, &belief));
        Ok(Self {
            evaluator: PBestEvaluator::new(config.grid_size)?,
            config,
            belief,
            labeled: vec![false; task.num_items()],
            labels_applied: 0,
            frozen_marginal,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn belief(&self) -> &BeliefState {
        &self.belief
    }

    pub fn labeled(&self) -> &[bool] {
        &self.labeled
    }

    pub fn labels_applied(&self) -> usize {
        self.labels_applied
    }

    pub fn marginalizer(&self, task: &BenchmarkTask) -> Marginalizer {
        match &self.frozen_marginal {
            Some(m) => Marginalizer::with_marginal(&self.belief, m.clone()),
            None => Marginalizer::new(task, &self.belief),
        }
    }

    pub fn pbest(&mut self, task: &BenchmarkTask) -> Result<PBest, EngineError> {
        let marginalizer = self.marginalizer(task);
        self.evaluator.next_generation();
        Ok(self.evaluator.evaluate(&self.belief, marginalizer.marginal())?)
    }

    /// The next item to label under the configured acquisition method.
    pub fn next_query(&mut self, task: &BenchmarkTask) -> Result<QueryChoice, EngineError> {
        let marginalizer = self.marginalizer(task);
        Ok(select_next(
            &self.belief,
            task,
            &self.labeled,
            &self.config.method,
            self.labels_applied,
            &marginalizer,
            &mut self.evaluator,
        )?)
    }

    /// Applies a real label to the beliefs and marks the item labeled.
    pub fn observe(&mut self, task: &BenchmarkTask, item: usize, class: usize) -> Result<AppliedUpdate, EngineError> {
        if self.labeled.get(item).copied().unwrap_or(false) {
            return Err(EngineError::AlreadyLabeled(item));
        }
        let update = self.belief.apply_label(task, item, class, 1.0)?;
        self.labeled[item] = true;
        self.labels_applied += 1;
        Ok(update)
    }

    /// Undoes an update returned by [`observe`](Self::observe).
    pub fn retract(&mut self, update: &AppliedUpdate) -> Result<(), EngineError> {
        if !self.labeled.get(update.item).copied().unwrap_or(false) {
            return Err(EngineError::NotLabeled(update.item));
        }
        self.belief.revert(update)?;
        self.labeled[update.item] = false;
        self.labels_applied -= 1;
        Ok(())
    }
}
