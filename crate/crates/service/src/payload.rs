//! JSON bodies exchanged with clients.

use coda_core::acquisition::AcquisitionMethod;
use coda_core::belief::{PriorConfig, DEFAULT_ETA};
use coda_core::benchmark::Manifest;
use coda_core::engine::EngineConfig;
use coda_core::pbest::DEFAULT_GRID_SIZE;
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

/// Number of most recent history rows included in a state payload.
pub const HISTORY_TAIL: usize = 20;

/// Per-session settings. Missing fields take the library defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub method: AcquisitionMethod,
    pub prior: PriorConfig,
    pub eta: f64,
    pub grid_size: usize,
    pub freeze_marginal: bool,
    /// Stop offering queries after this many labels.
    pub budget: Option<usize>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            method: AcquisitionMethod::new(coda_core::acquisition::AcquisitionKind::Eig),
            prior: PriorConfig::default(),
            eta: DEFAULT_ETA,
            grid_size: DEFAULT_GRID_SIZE,
            freeze_marginal: false,
            budget: None,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self, num_items: usize) -> Result<(), ServiceError> {
        let bad = |m: String| Err(ServiceError::BadRequest(m));
        match self.budget {
            Some(0) => return bad("budget must be at least 1".into()),
            Some(b) if b > num_items => return bad(format!("budget {b} exceeds pool size {num_items}")),
            _ => {}
        }
        if self.grid_size < 3 {
            return bad(format!("grid_size must be at least 3, got {}", self.grid_size));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be positive, got {}", self.eta));
        }
        self.prior.validate().or_else(|e| bad(e.to_string()))
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            method: self.method,
            prior: self.prior,
            eta: self.eta,
            grid_size: self.grid_size,
            freeze_marginal: self.freeze_marginal,
        }
    }
}

/// `POST /sessions`. Exactly one of `manifest_path` and `manifest` is required;
/// relative paths inside an inline manifest resolve against the service's
/// working directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateSession {
    #[serde(default)]
    pub manifest_path: Option<String>,
    #[serde(default)]
    pub manifest: Option<Manifest>,
    #[serde(default)]
    pub config: SessionConfig,
}

/// `POST /sessions/{id}/labels`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmitLabel {
    /// Labels applied when the query was shown (the payload's `step`).
    pub step: usize,
    pub item_id: String,
    pub class_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingQuery {
    pub item_index: usize,
    pub item_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub item_uri: Option<String>,
    /// Acquisition score of the item; absent for random sampling.
    pub score: Option<f64>,
}

/// One applied label. `chosen_model` and `pbest` are the selection shown
/// before the label arrived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: usize,
    pub item_index: usize,
    pub item_id: String,
    pub class_index: usize,
    pub chosen_model: usize,
    pub pbest: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatePayload {
    pub session_id: String,
    pub task_ref: String,
    /// Labels applied so far.
    pub step: usize,
    pub budget: Option<usize>,
    pub num_items: usize,
    pub num_classes: usize,
    pub model_ids: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class_names: Option<Vec<String>>,
    pub pbest: Vec<f64>,
    pub chosen_model: usize,
    pub chosen_model_id: String,
    /// Posterior-mean accuracy of each model.
    pub mean_accuracy: Vec<f64>,
    pub pending_query: Option<PendingQuery>,
    pub history_length: usize,
    pub history_tail: Vec<HistoryRow>,
    pub config: SessionConfig,
}
