use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BenchmarkError, BenchmarkTask};

/// On-disk layout of the prediction tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictionFormat {
    /// Row-major little-endian `f32`, index order `(model, item, class)`, no header.
    F32le,
    /// One line per `(model, item)`: `model_id,item_id,s_1,...,s_C`.
    Csv,
}

/// JSON manifest describing a benchmark. Relative file paths resolve against
/// the manifest's own directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub model_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub num_classes: usize,
    pub predictions_file: PathBuf,
    pub predictions_format: PredictionFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_uris: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_names: Option<Vec<String>>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self, BenchmarkError> {
        let text = fs::read_to_string(path).map_err(|source| io_err(path, source))?;
        serde_json::from_str(&text).map_err(|e| BenchmarkError::Manifest {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    /// Loads the task this manifest describes, resolving relative paths
    /// against `base_dir`.
    pub fn load(&self, base_dir: &Path) -> Result<BenchmarkTask, BenchmarkError> {
        let h = self.model_ids.len();
        let d = self.item_ids.len();
        let c = self.num_classes;
        let pred_path = resolve(base_dir, &self.predictions_file);
        let predictions = match self.predictions_format {
            PredictionFormat::F32le => read_f32le(&pred_path, h * d * c)?,
            PredictionFormat::Csv => read_prediction_csv(&pred_path, &self.model_ids, &self.item_ids, c)?,
        };
        let labels = match &self.labels_file {
            Some(file) => Some(load_labels(&resolve(base_dir, file), &self.item_ids, c)?),
            None => None,
        };
        BenchmarkTask::new(self.model_ids.clone(), self.item_ids.clone(), c, predictions, labels)?
            .with_metadata(self.item_uris.clone(), self.class_names.clone())
    }

    /// Rewrites relative file references as paths under `base_dir`.
    pub fn resolved(mut self, base_dir: &Path) -> Self {
        self.predictions_file = resolve(base_dir, &self.predictions_file);
        self.labels_file = self.labels_file.map(|f| resolve(base_dir, &f));
        self
    }
}

/// Reads a manifest and the prediction/label files it references.
pub fn load_benchmark(manifest_path: &Path) -> Result<BenchmarkTask, BenchmarkError> {
    let manifest = Manifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    manifest.load(base)
}

/// Writes `task` into `dir` as `manifest.json` plus prediction and label
/// files; returns the manifest path.
pub fn save_benchmark(
    task: &BenchmarkTask,
    dir: &Path,
    format: PredictionFormat,
) -> Result<PathBuf, BenchmarkError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let predictions_file = match format {
        PredictionFormat::F32le => {
            let path = dir.join("predictions.f32le");
            let mut bytes = Vec::with_capacity(task.predictions().len() * 4);
            for v in task.predictions() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
            PathBuf::from("predictions.f32le")
        }
        PredictionFormat::Csv => {
            let path = dir.join("predictions.csv");
            let mut w = csv_writer(&path)?;
            let mut header = vec!["model_id".to_string(), "item_id".to_string()];
            header.extend((1..=task.num_classes()).map(|c| format!("s_{c}")));
            write_record(&mut w, &path, &header)?;
            for (k, model) in task.model_ids().iter().enumerate() {
                for (i, item) in task.item_ids().iter().enumerate() {
                    let mut rec = vec![model.clone(), item.clone()];
                    rec.extend(task.prediction(k, i).iter().map(|v| v.to_string()));
                    write_record(&mut w, &path, &rec)?;
                }
            }
            w.flush().map_err(|e| io_err(&path, e))?;
            PathBuf::from("predictions.csv")
        }
    };
    let labels_file = match task.oracle_labels() {
        Some(labels) => {
            let path = dir.join("labels.csv");
            let mut w = csv_writer(&path)?;
            write_record(&mut w, &path, &["item_id".to_string(), "class_index".to_string()])?;
            for (id, label) in task.item_ids().iter().zip(labels) {
                write_record(&mut w, &path, &[id.clone(), label.to_string()])?;
            }
            w.flush().map_err(|e| io_err(&path, e))?;
            Some(PathBuf::from("labels.csv"))
        }
        None => None,
    };
    let manifest = Manifest {
        model_ids: task.model_ids().to_vec(),
        item_ids: task.item_ids().to_vec(),
        num_classes: task.num_classes(),
        predictions_file,
        predictions_format: format,
        labels_file,
        item_uris: task.item_uris().map(<[String]>::to_vec),
        class_names: task.class_names().map(<[String]>::to_vec),
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(|e| io_err(&path, e))?;
    Ok(path)
}

/// Reads a `item_id,class_index` CSV covering every item in `item_ids`.
/// A leading header row is skipped.
pub fn load_labels(path: &Path, item_ids: &[String], num_classes: usize) -> Result<Vec<usize>, BenchmarkError> {
    let index: HashMap<&str, usize> = item_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut labels: Vec<Option<usize>> = vec![None; item_ids.len()];
    for (line, record) in csv_records(path)?.into_iter().enumerate() {
        if record.len() != 2 {
            return Err(csv_err(path, format!("line {}: expected 2 fields, got {}", line + 1, record.len())));
        }
        let class = match record[1].trim().parse::<usize>() {
            Ok(c) => c,
            Err(_) if line == 0 => continue,
            Err(_) => return Err(csv_err(path, format!("line {}: bad class index {:?}", line + 1, record[1]))),
        };
        let item = *index
            .get(record[0].as_str())
            .ok_or_else(|| csv_err(path, format!("line {}: unknown item {:?}", line + 1, record[0])))?;
        if class >= num_classes {
            return Err(BenchmarkError::LabelOutOfRange {
                item,
                label: class,
                num_classes,
            });
        }
        if labels[item].replace(class).is_some() {
            return Err(csv_err(path, format!("duplicate label for item {:?}", record[0])));
        }
    }
    labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| l.ok_or_else(|| csv_err(path, format!("missing label for item {:?}", item_ids[i]))))
        .collect()
}

fn read_f32le(path: &Path, expected: usize) -> Result<Vec<f32>, BenchmarkError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.len() != expected * 4 {
        return Err(BenchmarkError::ShapeMismatch(format!(
            "{} holds {} bytes, manifest shape needs {}",
            path.display(),
            bytes.len(),
            expected * 4
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

fn read_prediction_csv(
    path: &Path,
    model_ids: &[String],
    item_ids: &[String],
    num_classes: usize,
) -> Result<Vec<f32>, BenchmarkError> {
    let models: HashMap<&str, usize> = model_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let items: HashMap<&str, usize> = item_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let d = item_ids.len();
    let mut out = vec![0.0f32; model_ids.len() * d * num_classes];
    let mut seen = vec![false; model_ids.len() * d];
    for (line, record) in csv_records(path)?.into_iter().enumerate() {
        if line == 0 && record.first().map(String::as_str) == Some("model_id") {
            continue;
        }
        if record.len() != num_classes + 2 {
            return Err(BenchmarkError::ShapeMismatch(format!(
                "{} line {}: {} score columns, manifest declares {num_classes} classes",
                path.display(),
                line + 1,
                record.len().saturating_sub(2)
            )));
        }
        let k = *models
            .get(record[0].as_str())
            .ok_or_else(|| csv_err(path, format!("line {}: unknown model {:?}", line + 1, record[0])))?;
        let i = *items
            .get(record[1].as_str())
            .ok_or_else(|| csv_err(path, format!("line {}: unknown item {:?}", line + 1, record[1])))?;
        if std::mem::replace(&mut seen[k * d + i], true) {
            return Err(csv_err(path, format!("line {}: duplicate row", line + 1)));
        }
        let row = &mut out[(k * d + i) * num_classes..(k * d + i + 1) * num_classes];
        for (slot, field) in row.iter_mut().zip(&record[2..]) {
            *slot = field
                .trim()
                .parse()
                .map_err(|_| csv_err(path, format!("line {}: bad score {field:?}", line + 1)))?;
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(BenchmarkError::ShapeMismatch(format!(
            "{}: no row for model {:?}, item {:?}",
            path.display(),
            model_ids[missing / d],
            item_ids[missing % d]
        )));
    }
    Ok(out)
}

fn csv_records(path: &Path) -> Result<Vec<Vec<String>>, BenchmarkError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_or_io(path, e))?;
    reader
        .records()
        .map(|r| {
            r.map(|rec| rec.iter().map(str::to_string).collect())
                .map_err(|e| csv_or_io(path, e))
        })
        .collect()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, BenchmarkError> {
    csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_or_io(path, e))
}

fn write_record<S: AsRef<[u8]>>(w: &mut csv::Writer<fs::File>, path: &Path, rec: &[S]) -> Result<(), BenchmarkError> {
    w.write_record(rec).map_err(|e| csv_or_io(path, e))
}

fn resolve(base: &Path, file: &Path) -> PathBuf {
    if file.is_absolute() {
        file.to_path_buf()
    } else {
        base.join(file)
    }
}

fn io_err(path: &Path, source: std::io::Error) -> BenchmarkError {
    BenchmarkError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path, message: String) -> BenchmarkError {
    BenchmarkError::Csv {
        path: path.display().to_string(),
        message,
    }
}

fn csv_or_io(path: &Path, e: csv::Error) -> BenchmarkError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(source) => io_err(path, source),
            _ => unreachable!(),
        }
    } else {
        csv_err(path, e.to_string())
    }
}
