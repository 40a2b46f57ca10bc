//! Labeling sessions and their on-disk form.
//!
//! Each session lives in its own directory:
//!
//! - `session.json`: id, resolved manifest and engine config, written once
//! - `manifest.json`: copy of the manifest with absolute file paths
//! - `history.log`: one JSON record per label or undo, fsynced before the
//!   request is answered
//! - `belief.f32le` / `belief.json`: latest concentrations, for inspection
//!
//! On startup a session is rebuilt by recomputing the prior from the
//! manifest and replaying `history.log`, which reproduces the beliefs
//! bit-for-bit.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use coda_core::acquisition::QueryChoice;
use coda_core::belief::AppliedUpdate;
use coda_core::benchmark::{BenchmarkTask, Manifest};
use coda_core::engine::SelectionEngine;
use coda_core::pbest::{mean_accuracy, select_model};
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;
use crate::payload::{HistoryRow, PendingQuery, SessionConfig, StatePayload, HISTORY_TAIL};

const HEADER_FILE: &str = "session.json";
const MANIFEST_FILE: &str = "manifest.json";
const LOG_FILE: &str = "history.log";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SessionHeader {
    session_id: String,
    task_ref: PathBuf,
    config: SessionConfig,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum LogRecord {
    Label { step: usize, item: usize, class: usize },
    Undo { step: usize },
}

/// Mutable part of a session, guarded by the session's writer lock.
struct SessionCore {
    dir: PathBuf,
    header: SessionHeader,
    task: Arc<BenchmarkTask>,
    engine: SelectionEngine,
    history: Vec<HistoryRow>,
    updates: Vec<AppliedUpdate>,
    pbest: Vec<f64>,
    pending: Option<QueryChoice>,
    log: File,
}

struct Session {
    core: Mutex<SessionCore>,
    committed: RwLock<Arc<StatePayload>>,
}

/// Every session known to the service, keyed by id.
pub struct SessionStore {
    data_dir: PathBuf,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
}

impl SessionStore {
    /// Opens `data_dir`, creating it if needed, and restores every session
    /// found in it.
    pub fn open(data_dir: &Path) -> Result<Self, ServiceError> {
        fs::create_dir_all(data_dir).map_err(|e| ServiceError::storage(data_dir, e))?;
        let mut sessions = HashMap::new();
        let entries = fs::read_dir(data_dir).map_err(|e| ServiceError::storage(data_dir, e))?;
        for entry in entries {
            let dir = entry.map_err(|e| ServiceError::storage(data_dir, e))?.path();
            if !dir.join(HEADER_FILE).is_file() {
                continue;
            }
            let core = SessionCore::restore(&dir)?;
            let payload = Arc::new(core.payload());
            sessions.insert(
                core.header.session_id.clone(),
                Arc::new(Session {
                    core: Mutex::new(core),
                    committed: RwLock::new(payload),
                }),
            );
        }
        Ok(Self {
            data_dir: data_dir.to_path_buf(),
            sessions: RwLock::new(sessions),
        })
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().expect("session map").keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Loads the manifest, builds the prior, picks the first query and
    /// persists the new session.
    pub fn create(&self, manifest: Manifest, base_dir: &Path, config: SessionConfig) -> Result<Arc<StatePayload>, ServiceError> {
        let manifest = manifest.resolved(&absolute(base_dir)?);
        let task = manifest.load(Path::new("/")).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        config.validate(task.num_items())?;

        let session_id = uuid::Uuid::new_v4().simple().to_string();
        let dir = self.data_dir.join(&session_id);
        fs::create_dir_all(&dir).map_err(|e| ServiceError::storage(&dir, e))?;
        let task_ref = dir.join(MANIFEST_FILE);
        write_json(&task_ref, &manifest)?;
        let header = SessionHeader {
            session_id: session_id.clone(),
            task_ref,
            config,
        };
        write_json(&dir.join(HEADER_FILE), &header)?;

        let core = SessionCore::start(dir, header, Arc::new(task))?;
        core.persist_belief()?;
        let payload = Arc::new(core.payload());
        let session = Arc::new(Session {
            core: Mutex::new(core),
            committed: RwLock::new(Arc::clone(&payload)),
        });
        self.sessions.write().expect("session map").insert(session_id, session);
        Ok(payload)
    }

    fn session(&self, id: &str) -> Result<Arc<Session>, ServiceError> {
        self.sessions
            .read()
            .expect("session map")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("no session {id:?}")))
    }

    /// Latest committed state; never waits on a writer.
    pub fn state(&self, id: &str) -> Result<Arc<StatePayload>, ServiceError> {
        Ok(Arc::clone(&self.session(id)?.committed.read().expect("payload lock")))
    }

    /// Records `class_index` for the pending query. `step` is the number of
    /// labels the caller saw when the query was shown; repeating an
    /// already-applied submission returns the current state unchanged.
    pub fn submit_label(&self, id: &str, step: usize, item_id: &str, class_index: usize) -> Result<Arc<StatePayload>, ServiceError> {
        let session = self.session(id)?;
        let mut core = session.core.lock().expect("session writer");
        let item = core
            .task
            .item_index(item_id)
            .ok_or_else(|| ServiceError::BadRequest(format!("unknown item {item_id:?}")))?;
        let current = core.engine.labels_applied();
        if step + 1 == current {
            if let Some(last) = core.history.last() {
                if last.item_index == item && last.class_index == class_index {
                    return Ok(Arc::clone(&session.committed.read().expect("payload lock")));
                }
            }
        }
        if step != current {
            return Err(ServiceError::Conflict(format!("step {step} is stale; session is at step {current}")));
        }
        if class_index >= core.task.num_classes() {
            return Err(ServiceError::BadRequest(format!(
                "class {class_index} out of range for {} classes",
                core.task.num_classes()
            )));
        }
        match core.pending.as_ref().map(|q| q.item) {
            Some(pending) if pending == item => {}
            Some(pending) => {
                return Err(ServiceError::Conflict(format!(
                    "item {item_id:?} is not the pending query ({:?})",
                    core.task.item_ids()[pending]
                )))
            }
            None => return Err(ServiceError::Conflict("session has no pending query".into())),
        }
        core.append(LogRecord::Label {
            step: current + 1,
            item,
            class: class_index,
        })?;
        core.apply_label(item, class_index)?;
        core.refresh()?;
        core.persist_belief()?;
        Ok(commit(&session, &core))
    }

    /// Reverts the most recent label.
    pub fn undo(&self, id: &str) -> Result<Arc<StatePayload>, ServiceError> {
        let session = self.session(id)?;
        let mut core = session.core.lock().expect("session writer");
        if core.history.is_empty() {
            return Err(ServiceError::Conflict("nothing to undo".into()));
        }
        let step = core.engine.labels_applied();
        core.append(LogRecord::Undo { step })?;
        core.apply_undo()?;
        core.refresh()?;
        core.persist_belief()?;
        Ok(commit(&session, &core))
    }

    /// Full labeling history as CSV, one row per applied label.
    pub fn export_csv(&self, id: &str) -> Result<String, ServiceError> {
        let session = self.session(id)?;
        let core = session.core.lock().expect("session writer");
        let mut out = csv::Writer::from_writer(Vec::new());
        let mut header = vec![
            "step".to_string(),
            "item_index".into(),
            "item_id".into(),
            "class_index".into(),
            "class_name".into(),
            "chosen_model".into(),
            "chosen_model_id".into(),
        ];
        header.extend(core.task.model_ids().iter().map(|m| format!("pbest_{m}")));
        out.write_record(&header).map_err(ServiceError::internal)?;
        for row in &core.history {
            let mut record = vec![
                row.step.to_string(),
                row.item_index.to_string(),
                row.item_id.clone(),
                row.class_index.to_string(),
                core.task
                    .class_names()
                    .map(|n| n[row.class_index].clone())
                    .unwrap_or_default(),
                row.chosen_model.to_string(),
                core.task.model_ids()[row.chosen_model].clone(),
            ];
            record.extend(row.pbest.iter().map(|p| p.to_string()));
            out.write_record(&record).map_err(ServiceError::internal)?;
        }
        let bytes = out.into_inner().map_err(ServiceError::internal)?;
        String::from_utf8(bytes).map_err(ServiceError::internal)
    }
}

fn commit(session: &Session, core: &SessionCore) -> Arc<StatePayload> {
    let payload = Arc::new(core.payload());
    *session.committed.write().expect("payload lock") = Arc::clone(&payload);
    payload
}

impl SessionCore {
    fn start(dir: PathBuf, header: SessionHeader, task: Arc<BenchmarkTask>) -> Result<Self, ServiceError> {
        let engine = SelectionEngine::new(&task, header.config.engine_config()).map_err(ServiceError::bad_request)?;
        let log_path = dir.join(LOG_FILE);
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| ServiceError::storage(&log_path, e))?;
        let mut core = Self {
            dir,
            header,
            task,
            engine,
            history: Vec::new(),
            updates: Vec::new(),
            pbest: Vec::new(),
            pending: None,
            log,
        };
        core.pbest = core.engine.pbest(&core.task).map_err(ServiceError::internal)?.probs;
        core.refresh()?;
        Ok(core)
    }

    fn restore(dir: &Path) -> Result<Self, ServiceError> {
        let header: SessionHeader = read_json(&dir.join(HEADER_FILE))?;
        let manifest_path = dir.join(MANIFEST_FILE);
        let manifest: Manifest = read_json(&manifest_path)?;
        let task = manifest.load(Path::new("/")).map_err(|e| ServiceError::Storage {
            path: manifest_path.display().to_string(),
            message: e.to_string(),
        })?;
        let log_path = dir.join(LOG_FILE);
        let records = read_log(&log_path)?;

        let engine = SelectionEngine::new(&task, header.config.engine_config()).map_err(ServiceError::internal)?;
        let log = OpenOptions::new()
            .append(true)
            .create(true)
            .open(&log_path)
            .map_err(|e| ServiceError::storage(&log_path, e))?;
        let mut core = Self {
            dir: dir.to_path_buf(),
            header,
            task: Arc::new(task),
            engine,
            history: Vec::new(),
            updates: Vec::new(),
            pbest: Vec::new(),
            pending: None,
            log,
        };
        core.pbest = core.engine.pbest(&core.task).map_err(ServiceError::internal)?.probs;
        for record in records {
            match record {
                LogRecord::Label { item, class, .. } => core.apply_label(item, class)?,
                LogRecord::Undo { .. } => core.apply_undo()?,
            }
        }
        core.refresh()?;
        Ok(core)
    }

    fn append(&mut self, record: LogRecord) -> Result<(), ServiceError> {
        let path = self.dir.join(LOG_FILE);
        let mut line = serde_json::to_vec(&record).map_err(ServiceError::internal)?;
        line.push(b'\n');
        self.log.write_all(&line).map_err(|e| ServiceError::storage(&path, e))?;
        self.log.sync_data().map_err(|e| ServiceError::storage(&path, e))
    }

    /// Applies a label and records the history row; `self.pbest` must hold
    /// the beliefs shown before the label.
    fn apply_label(&mut self, item: usize, class: usize) -> Result<(), ServiceError> {
        let chosen_model = select_model_of(&self.pbest);
        let update = self.engine.observe(&self.task, item, class).map_err(ServiceError::bad_request)?;
        self.history.push(HistoryRow {
            step: self.history.len() + 1,
            item_index: item,
            item_id: self.task.item_ids()[item].clone(),
            class_index: class,
            chosen_model,
            pbest: std::mem::take(&mut self.pbest),
        });
        self.updates.push(update);
        self.pbest = self.engine.pbest(&self.task).map_err(ServiceError::internal)?.probs;
        Ok(())
    }

    fn apply_undo(&mut self) -> Result<(), ServiceError> {
        let update = self
            .updates
            .pop()
            .ok_or_else(|| ServiceError::Conflict("nothing to undo".into()))?;
        self.engine.retract(&update).map_err(ServiceError::internal)?;
        let row = self.history.pop().expect("history tracks updates");
        self.pbest = row.pbest;
        Ok(())
    }

    /// Selects the next query, unless the budget is spent or the pool exhausted.
    fn refresh(&mut self) -> Result<(), ServiceError> {
        let applied = self.engine.labels_applied();
        let budget_left = self.header.config.budget.is_none_or(|b| applied < b);
        self.pending = if budget_left && applied < self.task.num_items() {
            Some(self.engine.next_query(&self.task).map_err(ServiceError::internal)?)
        } else {
            None
        };
        Ok(())
    }

    fn persist_belief(&self) -> Result<(), ServiceError> {
        self.engine
            .belief()
            .save(&self.dir)
            .map_err(|e| ServiceError::storage(&self.dir, e))
    }

    fn payload(&self) -> StatePayload {
        let task = &self.task;
        let marginalizer = self.engine.marginalizer(task);
        let chosen = select_model_of(&self.pbest);
        let tail_start = self.history.len().saturating_sub(HISTORY_TAIL);
        StatePayload {
            session_id: self.header.session_id.clone(),
            task_ref: self.header.task_ref.display().to_string(),
            step: self.engine.labels_applied(),
            budget: self.header.config.budget,
            num_items: task.num_items(),
            num_classes: task.num_classes(),
            model_ids: task.model_ids().to_vec(),
            class_names: task.class_names().map(|n| n.to_vec()),
            pbest: self.pbest.clone(),
            chosen_model: chosen,
            chosen_model_id: task.model_ids()[chosen].clone(),
            mean_accuracy: mean_accuracy(self.engine.belief(), marginalizer.marginal()),
            pending_query: self.pending.as_ref().map(|q| PendingQuery {
                item_index: q.item,
                item_id: task.item_ids()[q.item].clone(),
                item_uri: task.item_uris().map(|u| u[q.item].clone()),
                score: q.score,
            }),
            history_length: self.history.len(),
            history_tail: self.history[tail_start..].to_vec(),
            config: self.header.config,
        }
    }
}

fn select_model_of(probs: &[f64]) -> usize {
    select_model(&coda_core::pbest::PBest {
        probs: probs.to_vec(),
        grid_size: 0,
        raw_mass: 1.0,
    })
}

fn read_log(path: &Path) -> Result<Vec<LogRecord>, ServiceError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(ServiceError::storage(path, e)),
    };
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ServiceError::storage(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| ServiceError::Storage {
            path: path.display().to_string(),
            message: format!("line {}: {e}", n + 1),
        })?;
        records.push(record);
    }
    Ok(records)
}

fn absolute(path: &Path) -> Result<PathBuf, ServiceError> {
    std::path::absolute(path).map_err(|e| ServiceError::storage(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ServiceError> {
    let bytes = serde_json::to_vec_pretty(value).map_err(ServiceError::internal)?;
    let tmp = path.with_extension("json.tmp");
    let result = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| ServiceError::storage(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ServiceError> {
    let text = fs::read_to_string(path).map_err(|e| ServiceError::storage(path, e))?;
    serde_json::from_str(&text).map_err(|e| ServiceError::storage(path, e))
}
