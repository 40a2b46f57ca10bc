//! Model-selection benchmark tasks: a prediction tensor for every candidate
//! model over an unlabeled pool, plus optional oracle labels.
//!
//! Predictions are held as `f32` in `(model, item, class)` row-major order,
//! the same layout as the `f32le` on-disk format, so a task written and read
//! back is bit-identical. All derived quantities (hard predictions, per-model
//! class mass) are computed once at construction.

mod io;
mod synth;
mod validate;

pub use io::{load_benchmark, load_labels, save_benchmark, Manifest, PredictionFormat};
pub use synth::{generate_synthetic, SyntheticSpec};
pub use validate::{validate, ClassCoverage, ModelKind, NormalizationViolation, ValidationReport};

use thiserror::Error;

/// Rows whose mass is within this distance of 1 are kept bit-for-bit.
pub const NORMALIZATION_SLACK: f64 = 1e-6;

/// Tolerance used when reporting normalization violations.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {message}")]
    Manifest { path: String, message: String },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid task shape: {0}")]
    InvalidShape(String),
    #[error("negative score {value} at model {model}, item {item}, class {class}")]
    NegativeScore {
        model: usize,
        item: usize,
        class: usize,
        value: f32,
    },
    #[error("non-finite score at model {model}, item {item}, class {class}")]
    NonFiniteScore { model: usize, item: usize, class: usize },
    #[error("prediction row for model {model}, item {item} has zero mass")]
    ZeroRow { model: usize, item: usize },
    #[error("label {label} for item {item} is out of range for {num_classes} classes")]
    LabelOutOfRange {
        item: usize,
        label: usize,
        num_classes: usize,
    },
    #[error("csv error in {path}: {message}")]
    Csv { path: String, message: String },
    #[error("invalid synthetic spec: {0}")]
    InvalidSynthetic(String),
}

/// A `(predictions, labels)` benchmark over `|H|` models, `|D|` items and `C` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkTask {
    model_ids: Vec<String>,
    item_ids: Vec<String>,
    num_classes: usize,
    predictions: Vec<f32>,
    oracle_labels: Option<Vec<usize>>,
    item_uris: Option<Vec<String>>,
    class_names: Option<Vec<String>>,
    // derived
    hard: Vec<u32>,
    hard_by_item: Vec<u32>,
    class_mass: Vec<f64>,
}

impl BenchmarkTask {
    /// Builds a task, normalizing soft rows to unit mass.
    ///
    /// Negative, non-finite and all-zero rows are rejected rather than repaired.
    pub fn new(
        model_ids: Vec<String>,
        item_ids: Vec<String>,
        num_classes: usize,
        mut predictions: Vec<f32>,
        oracle_labels: Option<Vec<usize>>,
    ) -> Result<Self, BenchmarkError> {
        let num_models = model_ids.len();
        let num_items = item_ids.len();
        if num_models < 2 {
            return Err(BenchmarkError::InvalidShape(format!(
                "need at least 2 models, got {num_models}"
            )));
        }
        if num_items < 1 {
            return Err(BenchmarkError::InvalidShape("need at least 1 item".into()));
        }
        if num_classes < 2 {
            return Err(BenchmarkError::InvalidShape(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        let expected = num_models * num_items * num_classes;
        if predictions.len() != expected {
            return Err(BenchmarkError::ShapeMismatch(format!(
                "prediction tensor has {} entries, expected {num_models}x{num_items}x{num_classes} = {expected}",
                predictions.len()
            )));
        }
        if let Some(labels) = &oracle_labels {
            if labels.len() != num_items {
                return Err(BenchmarkError::ShapeMismatch(format!(
                    "{} labels for {num_items} items",
                    labels.len()
                )));
            }
            if let Some((item, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
                return Err(BenchmarkError::LabelOutOfRange {
                    item,
                    label,
                    num_classes,
                });
            }
        }

        for (row_index, row) in predictions.chunks_exact_mut(num_classes).enumerate() {
            let (model, item) = (row_index / num_items, row_index % num_items);
            let mut mass = 0.0f64;
            for (class, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(BenchmarkError::NonFiniteScore { model, item, class });
                }
                if v < 0.0 {
                    return Err(BenchmarkError::NegativeScore {
                        model,
                        item,
                        class,
                        value: v,
                    });
                }
                mass += f64::from(v);
            }
            if mass <= 0.0 {
                return Err(BenchmarkError::ZeroRow { model, item });
            }
            if (mass - 1.0).abs() > NORMALIZATION_SLACK {
                for v in row.iter_mut() {
                    *v = (f64::from(*v) / mass) as f32;
                }
            }
        }

        let mut hard = Vec::with_capacity(num_models * num_items);
        let mut class_mass = vec![0.0f64; num_models * num_classes];
        for (row_index, row) in predictions.chunks_exact(num_classes).enumerate() {
            hard.push(argmax_f32(row) as u32);
            let model = row_index / num_items;
            let mass = &mut class_mass[model * num_classes..(model + 1) * num_classes];
            for (m, &v) in mass.iter_mut().zip(row) {
                *m += f64::from(v);
            }
        }
        let mut hard_by_item = vec![0u32; num_models * num_items];
        for k in 0..num_models {
            for i in 0..num_items {
                hard_by_item[i * num_models + k] = hard[k * num_items + i];
            }
        }

        Ok(Self {
            model_ids,
            item_ids,
            num_classes,
            predictions,
            oracle_labels,
            item_uris: None,
            class_names: None,
            hard,
            hard_by_item,
            class_mass,
        })
    }

    /// Attaches optional display metadata (per-item URIs, class names).
    pub fn with_metadata(
        mut self,
        item_uris: Option<Vec<String>>,
        class_names: Option<Vec<String>>,
    ) -> Result<Self, BenchmarkError> {
        if let Some(uris) = &item_uris {
            if uris.len() != self.num_items() {
                return Err(BenchmarkError::ShapeMismatch(format!(
                    "{} item uris for {} items",
                    uris.len(),
                    self.num_items()
                )));
            }
        }
        if let Some(names) = &class_names {
            if names.len() != self.num_classes {
                return Err(BenchmarkError::ShapeMismatch(format!(
                    "{} class names for {} classes",
                    names.len(),
                    self.num_classes
                )));
            }
        }
        self.item_uris = item_uris;
        self.class_names = class_names;
        Ok(self)
    }

    /// Returns a copy of this task with oracle labels replaced (or removed).
    pub fn with_labels(&self, labels: Option<Vec<usize>>) -> Result<Self, BenchmarkError> {
        let task = Self::new(
            self.model_ids.clone(),
            self.item_ids.clone(),
            self.num_classes,
            self.predictions.clone(),
            labels,
        )?;
        task.with_metadata(self.item_uris.clone(), self.class_names.clone())
    }

    pub fn num_models(&self) -> usize {
        self.model_ids.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn model_ids(&self) -> &[String] {
        &self.model_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn item_uris(&self) -> Option<&[String]> {
        self.item_uris.as_deref()
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn oracle_labels(&self) -> Option<&[usize]> {
        self.oracle_labels.as_deref()
    }

    /// The full prediction tensor, `(model, item, class)` row-major.
    pub fn predictions(&self) -> &[f32] {
        &self.predictions
    }

    /// Prediction vector of `model` on `item`.
    #[inline]
    pub fn prediction(&self, model: usize, item: usize) -> &[f32] {
        let start = (model * self.num_items() + item) * self.num_classes;
        &self.predictions[start..start + self.num_classes]
    }

    /// Argmax class of `model` on `item` (lowest index wins ties).
    #[inline]
    pub fn hard_prediction(&self, model: usize, item: usize) -> usize {
        self.hard[model * self.num_items() + item] as usize
    }

    /// Hard predictions of every model on `item`, in model order.
    #[inline]
    pub fn item_profile(&self, item: usize) -> &[u32] {
        let h = self.num_models();
        &self.hard_by_item[item * h..(item + 1) * h]
    }

    /// `Σ_i predictions[model, i, :]`, one entry per class.
    pub fn class_mass(&self, model: usize) -> &[f64] {
        &self.class_mass[model * self.num_classes..(model + 1) * self.num_classes]
    }

    pub fn item_index(&self, item_id: &str) -> Option<usize> {
        self.item_ids.iter().position(|id| id == item_id)
    }
}

/// Argmax over class scores, lowest index winning ties.
pub fn hard_predictions(task: &BenchmarkTask) -> Vec<Vec<usize>> {
    (0..task.num_models())
        .map(|k| (0..task.num_items()).map(|i| task.hard_prediction(k, i)).collect())
        .collect()
}

pub(crate) fn argmax_f32(row: &[f32]) -> usize {
    let mut best = 0;
    for (c, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = c;
        }
    }
    best
}

#[cfg(test)]
pub(crate) fn ids(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(preds: Vec<f32>, models: usize, items: usize, classes: usize) -> Result<BenchmarkTask, BenchmarkError> {
        BenchmarkTask::new(ids("m", models), ids("x", items), classes, preds, None)
    }

    #[test]
    fn normalized_rows_pass_through() {
        let preds = vec![0.3, 0.7, 1.0, 0.0, 0.5, 0.5, 0.1, 0.9, 0.0, 1.0, 0.25, 0.75];
        let t = task(preds.clone(), 2, 3, 2).unwrap();
        assert_eq!(t.predictions(), preds.as_slice());
    }

    #[test]
    fn soft_rows_are_rescaled() {
        let t = task(vec![0.2, 0.2, 1.0, 0.0], 2, 1, 2).unwrap();
        assert_eq!(t.prediction(0, 0), &[0.5, 0.5]);
        assert_eq!(t.prediction(1, 0), &[1.0, 0.0]);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            task(vec![0.5; 12], 2, 3, 3),
            Err(BenchmarkError::ShapeMismatch(_))
        ));
        assert!(matches!(
            task(vec![-0.1, 1.1, 0.5, 0.5], 2, 1, 2),
            Err(BenchmarkError::NegativeScore { .. })
        ));
        assert!(matches!(
            task(vec![0.0, 0.0, 0.5, 0.5], 2, 1, 2),
            Err(BenchmarkError::ZeroRow { model: 0, item: 0 })
        ));
        assert!(matches!(
            task(vec![f32::NAN, 0.0, 0.5, 0.5], 2, 1, 2),
            Err(BenchmarkError::NonFiniteScore { .. })
        ));
        assert!(matches!(task(vec![1.0, 0.0], 1, 1, 2), Err(BenchmarkError::InvalidShape(_))));
        let labelled = BenchmarkTask::new(ids("m", 2), ids("x", 1), 2, vec![1.0, 0.0, 1.0, 0.0], Some(vec![2]));
        assert!(matches!(labelled, Err(BenchmarkError::LabelOutOfRange { label: 2, .. })));
    }

    #[test]
    fn argmax_examples() {
        assert_eq!(argmax_f32(&[0.1, 0.7, 0.2]), 1);
        assert_eq!(argmax_f32(&[0.5, 0.5]), 0);
        assert_eq!(argmax_f32(&[0.0, 0.0, 1.0]), 2);
    }

    #[test]
    fn hard_predictions_and_profiles() {
        let preds = vec![
            0.1, 0.7, 0.2, //
            0.5, 0.5, 0.0, //
            0.0, 0.0, 1.0, //
            0.2, 0.2, 0.6,
        ];
        let t = task(preds, 2, 2, 3).unwrap();
        assert_eq!(hard_predictions(&t), vec![vec![1, 0], vec![2, 2]]);
        assert_eq!(t.item_profile(0), &[1, 2]);
        assert_eq!(t.item_profile(1), &[0, 2]);
        let mass: f64 = t.class_mass(0).iter().sum();
        assert!((mass - 2.0).abs() < 1e-6);
    }
}
