//! Dirichlet beliefs over per-model confusion matrices.
//!
//! `theta[k][c][c']` is the concentration of model `k`'s belief over row `c`
//! (true class) of its confusion matrix, column `c'` (predicted class). Priors
//! blend a static diagonal-weighted term with confusion counts measured
//! against the ensemble consensus; labels add `eta` to one cell per model.

use std::fs;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::benchmark::BenchmarkTask;

pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_TEMPERATURE: f64 = 0.5;
pub const DEFAULT_ETA: f64 = 0.01;

#[derive(Debug, Error)]
pub enum BeliefError {
    #[error("invalid prior config: {0}")]
    InvalidConfig(String),
    #[error("invalid concentrations: {0}")]
    InvalidConcentrations(String),
    #[error("item {item} out of range for {num_items} items")]
    ItemOutOfRange { item: usize, num_items: usize },
    #[error("class {class} out of range for {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },
    #[error("task shape {task:?} does not match belief shape {belief:?}")]
    ShapeMismatch { task: (usize, usize), belief: (usize, usize) },
    #[error("stale snapshot token")]
    StaleSnapshot,
    #[error("belief persistence error at {path}: {message}")]
    Persistence { path: String, message: String },
}

/// Which prior the belief state was initialized from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorMode {
    /// All-ones base, no consensus term.
    Uniform,
    /// Diagonal-weighted base, no consensus term.
    Diagonal,
    /// Diagonal-weighted base plus `alpha` times consensus confusion counts.
    Consensus,
}

impl std::fmt::Display for PriorMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PriorMode::Uniform => "uniform",
            PriorMode::Diagonal => "diagonal",
            PriorMode::Consensus => "consensus",
        })
    }
}

impl std::str::FromStr for PriorMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(PriorMode::Uniform),
            "diagonal" => Ok(PriorMode::Diagonal),
            "consensus" => Ok(PriorMode::Consensus),
            other => Err(format!("unknown prior mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    /// Weight of the consensus confusion counts.
    pub alpha: f64,
    /// Divides every prior concentration; smaller means a stronger prior.
    pub temperature: f64,
    pub mode: PriorMode,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            temperature: DEFAULT_TEMPERATURE,
            mode: PriorMode::Consensus,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<(), BeliefError> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(BeliefError::InvalidConfig(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(BeliefError::InvalidConfig(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Summed ensemble scores and the resulting consensus labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusSummary {
    pub consensus_labels: Vec<usize>,
    /// `|D| x C`, row-major.
    pub score_sums: Vec<f64>,
    pub num_classes: usize,
}

impl ConsensusSummary {
    pub fn scores(&self, item: usize) -> &[f64] {
        &self.score_sums[item * self.num_classes..(item + 1) * self.num_classes]
    }
}

/// `s[i][c] = Σ_k predictions[k][i][c]` and its argmax per item.
pub fn consensus(task: &BenchmarkTask) -> ConsensusSummary {
    let (d, c) = (task.num_items(), task.num_classes());
    let mut score_sums = vec![0.0f64; d * c];
    for k in 0..task.num_models() {
        for i in 0..d {
            let sums = &mut score_sums[i * c..(i + 1) * c];
            for (s, &p) in sums.iter_mut().zip(task.prediction(k, i)) {
                *s += f64::from(p);
            }
        }
    }
    let consensus_labels = score_sums.chunks_exact(c).map(argmax).collect();
    ConsensusSummary {
        consensus_labels,
        score_sums,
        num_classes: c,
    }
}

/// A dense `|H| x C x C` tensor of per-model confusion quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionTensor {
    num_models: usize,
    num_classes: usize,
    data: Vec<f64>,
}

impl ConfusionTensor {
    pub fn zeros(num_models: usize, num_classes: usize) -> Self {
        Self {
            num_models,
            num_classes,
            data: vec![0.0; num_models * num_classes * num_classes],
        }
    }

    pub fn from_vec(num_models: usize, num_classes: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), num_models * num_classes * num_classes, "confusion tensor shape");
        Self {
            num_models,
            num_classes,
            data,
        }
    }

    pub fn num_models(&self) -> usize {
        self.num_models
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    #[inline]
    pub fn get(&self, model: usize, true_class: usize, predicted: usize) -> f64 {
        self.data[(model * self.num_classes + true_class) * self.num_classes + predicted]
    }

    #[inline]
    pub fn row(&self, model: usize, true_class: usize) -> &[f64] {
        let start = (model * self.num_classes + true_class) * self.num_classes;
        &self.data[start..start + self.num_classes]
    }

    pub fn matrix(&self, model: usize) -> &[f64] {
        let n = self.num_classes * self.num_classes;
        &self.data[model * n..(model + 1) * n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Soft confusion counts of each model against the consensus labels:
/// `M̂[k][c][c'] = Σ_i [c*_i = c] · predictions[k][i][c']`.
pub fn empirical_confusions(task: &BenchmarkTask, summary: &ConsensusSummary) -> ConfusionTensor {
    let c = task.num_classes();
    let mut out = ConfusionTensor::zeros(task.num_models(), c);
    for k in 0..task.num_models() {
        let matrix = &mut out.data[k * c * c..(k + 1) * c * c];
        for (i, &label) in summary.consensus_labels.iter().enumerate() {
            let row = &mut matrix[label * c..(label + 1) * c];
            for (m, &p) in row.iter_mut().zip(task.prediction(k, i)) {
                *m += f64::from(p);
            }
        }
    }
    out
}

/// Builds Dirichlet concentrations `(β + α·M̂) / T`, where `β` is 1 on the
/// diagonal and `1/(C-1)` elsewhere. Uniform mode uses an all-ones `β` and
/// diagonal mode drops the consensus term.
pub fn build_prior(empirical: &ConfusionTensor, config: &PriorConfig) -> Result<BeliefState, BeliefError> {
    config.validate()?;
    let (h, c) = (empirical.num_models, empirical.num_classes);
    if c < 2 {
        return Err(BeliefError::InvalidConfig(format!("need at least 2 classes, got {c}")));
    }
    let off_diagonal = 1.0 / (c - 1) as f64;
    let alpha = match config.mode {
        PriorMode::Consensus => config.alpha,
        PriorMode::Uniform | PriorMode::Diagonal => 0.0,
    };
    let mut theta = Vec::with_capacity(h * c * c);
    for k in 0..h {
        for row in 0..c {
            for col in 0..c {
                let base = match config.mode {
                    PriorMode::Uniform => 1.0,
                    _ if row == col => 1.0,
                    _ => off_diagonal,
                };
                theta.push((base + alpha * empirical.get(k, row, col)) / config.temperature);
            }
        }
    }
    BeliefState::from_concentrations(h, c, theta, DEFAULT_ETA, config.mode)
}

/// Consensus summary, empirical confusions and prior in one call.
pub fn prior_for_task(task: &BenchmarkTask, config: &PriorConfig, eta: f64) -> Result<BeliefState, BeliefError> {
    let summary = consensus(task);
    let empirical = empirical_confusions(task, &summary);
    build_prior(&empirical, config)?.with_eta(eta)
}

/// Opaque token returned by [`BeliefState::snapshot`].
#[derive(Debug)]
#[must_use = "a snapshot must be restored"]
pub struct Snapshot {
    serial: u64,
    shape: (usize, usize),
}

/// Cell values overwritten by one label update, sufficient to undo it exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppliedUpdate {
    pub item: usize,
    pub true_class: usize,
    pub previous: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct BeliefState {
    num_models: usize,
    num_classes: usize,
    theta: Vec<f64>,
    eta: f64,
    origin: PriorMode,
    // (cell, previous value) written while any snapshot is open
    journal: Vec<(usize, f64)>,
    open: Vec<(u64, usize)>,
    next_serial: u64,
}

impl PartialEq for BeliefState {
    fn eq(&self, other: &Self) -> bool {
        self.num_models == other.num_models
            && self.num_classes == other.num_classes
            && self.eta.to_bits() == other.eta.to_bits()
            && self.origin == other.origin
            && self.theta.len() == other.theta.len()
            && self.theta.iter().zip(&other.theta).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl BeliefState {
    pub fn from_concentrations(
        num_models: usize,
        num_classes: usize,
        theta: Vec<f64>,
        eta: f64,
        origin: PriorMode,
    ) -> Result<Self, BeliefError> {
        if theta.len() != num_models * num_classes * num_classes {
            return Err(BeliefError::InvalidConcentrations(format!(
                "{} concentrations for {num_models} models x {num_classes}^2",
                theta.len()
            )));
        }
        if let Some(bad) = theta.iter().find(|&&t| !(t > 0.0 && t.is_finite())) {
            return Err(BeliefError::InvalidConcentrations(format!(
                "concentrations must be positive and finite, found {bad}"
            )));
        }
        Self {
            num_models,
            num_classes,
            theta,
            eta: DEFAULT_ETA,
            origin,
            journal: Vec::new(),
            open: Vec::new(),
            next_serial: 0,
        }
        .with_eta(eta)
    }

    pub fn with_eta(mut self, eta: f64) -> Result<Self, BeliefError> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(BeliefError::InvalidConfig(format!("eta must be positive, got {eta}")));
        }
        self.eta = eta;
        Ok(self)
    }

    pub fn num_models(&self) -> usize {
        self.num_models
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn origin(&self) -> PriorMode {
        self.origin
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    #[inline]
    pub fn concentration(&self, model: usize, true_class: usize, predicted: usize) -> f64 {
        self.theta[self.cell(model, true_class, predicted)]
    }

    #[inline]
    pub fn row(&self, model: usize, true_class: usize) -> &[f64] {
        let start = self.cell(model, true_class, 0);
        &self.theta[start..start + self.num_classes]
    }

    #[inline]
    fn cell(&self, model: usize, true_class: usize, predicted: usize) -> usize {
        (model * self.num_classes + true_class) * self.num_classes + predicted
    }

    /// Hash of the exact concentration bits, for before/after comparisons.
    pub fn fingerprint(&self) -> u64 {
        let mut hasher = DefaultHasher::new();
        (self.num_models, self.num_classes, self.eta.to_bits(), self.origin).hash(&mut hasher);
        for t in &self.theta {
            t.to_bits().hash(&mut hasher);
        }
        hasher.finish()
    }

    /// Records the observation `y_item = true_class`: for every model,
    /// `theta[k][true_class][ĉ_k(item)] += scale · eta`.
    pub fn apply_label(
        &mut self,
        task: &BenchmarkTask,
        item: usize,
        true_class: usize,
        scale: f64,
    ) -> Result<AppliedUpdate, BeliefError> {
        self.check_task(task)?;
        if item >= task.num_items() {
            return Err(BeliefError::ItemOutOfRange {
                item,
                num_items: task.num_items(),
            });
        }
        if true_class >= self.num_classes {
            return Err(BeliefError::ClassOutOfRange {
                class: true_class,
                num_classes: self.num_classes,
            });
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(BeliefError::InvalidConfig(format!("update scale must be positive, got {scale}")));
        }
        let previous = self.apply_profile(task.item_profile(item), true_class, scale * self.eta);
        Ok(AppliedUpdate {
            item,
            true_class,
            previous,
        })
    }

    pub(crate) fn apply_profile(&mut self, profile: &[u32], true_class: usize, increment: f64) -> Vec<(usize, f64)> {
        let mut previous = Vec::with_capacity(profile.len());
        for (k, &predicted) in profile.iter().enumerate() {
            let cell = self.cell(k, true_class, predicted as usize);
            let old = self.theta[cell];
            previous.push((cell, old));
            if !self.open.is_empty() {
                self.journal.push((cell, old));
            }
            self.theta[cell] = old + increment;
        }
        previous
    }

    /// Writes back the cells overwritten by `update`.
    pub fn revert(&mut self, update: &AppliedUpdate) -> Result<(), BeliefError> {
        if update.previous.iter().any(|&(cell, _)| cell >= self.theta.len()) {
            return Err(BeliefError::StaleSnapshot);
        }
        for &(cell, old) in update.previous.iter().rev() {
            if !self.open.is_empty() {
                self.journal.push((cell, self.theta[cell]));
            }
            self.theta[cell] = old;
        }
        Ok(())
    }

    /// Marks the current state; a later [`restore`](Self::restore) returns to
    /// it bit-for-bit. Snapshots nest and must be restored innermost first.
    pub fn snapshot(&mut self) -> Snapshot {
        let serial = self.next_serial;
        self.next_serial += 1;
        self.open.push((serial, self.journal.len()));
        Snapshot {
            serial,
            shape: (self.num_models, self.num_classes),
        }
    }

    pub fn restore(&mut self, token: Snapshot) -> Result<(), BeliefError> {
        if token.shape != (self.num_models, self.num_classes) {
            return Err(BeliefError::StaleSnapshot);
        }
        let position = self
            .open
            .iter()
            .rposition(|&(serial, _)| serial == token.serial)
            .ok_or(BeliefError::StaleSnapshot)?;
        let mark = self.open[position].1;
        // Restoring an outer snapshot also discards any inner ones.
        self.open.truncate(position);
        while self.journal.len() > mark {
            let (cell, old) = self.journal.pop().expect("journal above mark");
            self.theta[cell] = old;
        }
        if self.open.is_empty() {
            self.journal.clear();
        }
        Ok(())
    }

    /// Posterior-mean confusion matrices (each row of `theta` normalized).
    pub fn mean_confusions(&self) -> ConfusionTensor {
        let c = self.num_classes;
        let mut data = Vec::with_capacity(self.theta.len());
        for row in self.theta.chunks_exact(c) {
            let total: f64 = row.iter().sum();
            data.extend(row.iter().map(|t| t / total));
        }
        ConfusionTensor::from_vec(self.num_models, c, data)
    }

    pub(crate) fn check_task(&self, task: &BenchmarkTask) -> Result<(), BeliefError> {
        if task.num_models() != self.num_models || task.num_classes() != self.num_classes {
            return Err(BeliefError::ShapeMismatch {
                task: (task.num_models(), task.num_classes()),
                belief: (self.num_models, self.num_classes),
            });
        }
        Ok(())
    }

    /// Writes `belief.f32le` (concentrations, `(model, true, predicted)`
    /// order) and a `belief.json` sidecar into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), BeliefError> {
        let persist = |path: &Path, e: std::io::Error| BeliefError::Persistence {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        fs::create_dir_all(dir).map_err(|e| persist(dir, e))?;
        let tensor = dir.join("belief.f32le");
        let bytes: Vec<u8> = self.theta.iter().flat_map(|&t| (t as f32).to_le_bytes()).collect();
        fs::write(&tensor, bytes).map_err(|e| persist(&tensor, e))?;
        let header = BeliefHeader {
            num_models: self.num_models,
            num_classes: self.num_classes,
            eta: self.eta,
            origin: self.origin,
        };
        let sidecar = dir.join("belief.json");
        let json = serde_json::to_string_pretty(&header).expect("header serializes");
        fs::write(&sidecar, json).map_err(|e| persist(&sidecar, e))
    }

    /// Reads a state written by [`save`](Self::save). Concentrations come
    /// back at `f32` precision.
    pub fn load(dir: &Path) -> Result<Self, BeliefError> {
        let persist = |path: &Path, message: String| BeliefError::Persistence {
            path: path.display().to_string(),
            message,
        };
        let sidecar = dir.join("belief.json");
        let text = fs::read_to_string(&sidecar).map_err(|e| persist(&sidecar, e.to_string()))?;
        let header: BeliefHeader = serde_json::from_str(&text).map_err(|e| persist(&sidecar, e.to_string()))?;
        let tensor = dir.join("belief.f32le");
        let bytes = fs::read(&tensor).map_err(|e| persist(&tensor, e.to_string()))?;
        let expected = header.num_models * header.num_classes * header.num_classes * 4;
        if bytes.len() != expected {
            return Err(persist(&tensor, format!("{} bytes, expected {expected}", bytes.len())));
        }
        let theta = bytes
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
            .collect();
        Self::from_concentrations(header.num_models, header.num_classes, theta, header.eta, header.origin)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct BeliefHeader {
    num_models: usize,
    num_classes: usize,
    eta: f64,
    origin: PriorMode,
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
