use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{HarnessError, RunConfig, SelectionRun, Summary};

pub const REPORT_CSV: &str = "report.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const REGRET_UNITS: &str = "percentage_points";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_seconds: f64,
    pub mean_step_seconds: f64,
    pub max_step_seconds: f64,
    pub mean_pbest_evaluations_per_step: f64,
}

impl Timing {
    pub fn from_runs(runs: &[SelectionRun], total_seconds: f64) -> Self {
        let steps: Vec<f64> = runs.iter().flat_map(|r| r.wall_time_per_step.iter().copied()).collect();
        let evals: Vec<usize> = runs.iter().flat_map(|r| r.pbest_evaluations_per_step.iter().copied()).collect();
        let n = steps.len().max(1) as f64;
        Self {
            total_seconds,
            mean_step_seconds: steps.iter().sum::<f64>() / n,
            max_step_seconds: steps.iter().copied().fold(0.0, f64::max),
            mean_pbest_evaluations_per_step: evals.iter().sum::<usize>() as f64 / evals.len().max(1) as f64,
        }
    }
}

/// Everything written for one (task, config) evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub task: String,
    pub regret_units: String,
    pub config: RunConfig,
    pub summary: Summary,
    pub timing: Timing,
}

impl Report {
    pub fn new(task: impl Into<String>, config: RunConfig, summary: Summary, timing: Timing) -> Self {
        Self {
            task: task.into(),
            regret_units: REGRET_UNITS.to_string(),
            config,
            summary,
            timing,
        }
    }
}

/// Writes `report.csv` and/or `summary.json` into `dir`, creating it if
/// needed. Each file is written to a temporary sibling and renamed into
/// place. Returns the paths written.
pub fn export_report(report: &Report, dir: &Path, format: ReportFormat) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut written = Vec::new();
    if matches!(format, ReportFormat::Csv | ReportFormat::Both) {
        let path = dir.join(REPORT_CSV);
        write_atomic(&path, render_csv(&report.summary).as_bytes())?;
        written.push(path);
    }
    if matches!(format, ReportFormat::Json | ReportFormat::Both) {
        let path = dir.join(SUMMARY_JSON);
        let mut json = serde_json::to_vec_pretty(report).map_err(|e| io_err(&path, e))?;
        json.push(b'\n');
        write_atomic(&path, &json)?;
        written.push(path);
    }
    Ok(written)
}

pub fn load_summary(path: &Path) -> Result<Report, HarnessError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| io_err(path, e))
}

fn render_csv(summary: &Summary) -> String {
    let mut out = String::from("step,mean_regret,std_regret,mean_cum_regret,std_cum_regret,success_rate,near_optimal_rate\n");
    for s in &summary.steps {
        // `{}` on f64 prints the shortest string that round-trips
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.step, s.mean_regret, s.std_regret, s.mean_cum_regret, s.std_cum_regret, s.success_rate, s.near_optimal_rate
        ));
    }
    out
}

/// Writes through a sibling temp file, fsyncs, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let file_name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        io_err(path, e)
    })
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}
