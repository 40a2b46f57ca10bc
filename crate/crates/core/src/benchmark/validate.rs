use serde::{Deserialize, Serialize};

use super::{BenchmarkTask, NORMALIZATION_TOLERANCE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Every prediction row is one-hot.
    HardPredictor,
    SoftPredictor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationViolation {
    pub model: usize,
    pub item: usize,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCoverage {
    /// Number of `(model, item)` argmaxes landing on each class.
    pub argmax_counts: Vec<usize>,
    /// Oracle label counts, when labels are present.
    pub label_counts: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub num_models: usize,
    pub num_items: usize,
    pub num_classes: usize,
    pub normalization_violations: Vec<NormalizationViolation>,
    pub model_kinds: Vec<ModelKind>,
    pub coverage: ClassCoverage,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.normalization_violations.is_empty() && self.warnings.is_empty()
    }
}

/// Inspects a task without modifying it.
pub fn validate(task: &BenchmarkTask) -> ValidationReport {
    let (h, d, c) = (task.num_models(), task.num_items(), task.num_classes());
    let mut violations = Vec::new();
    let mut kinds = Vec::with_capacity(h);
    let mut argmax_counts = vec![0usize; c];
    for k in 0..h {
        let mut all_hard = true;
        for i in 0..d {
            let row = task.prediction(k, i);
            let mass: f64 = row.iter().map(|&v| f64::from(v)).sum();
            if (mass - 1.0).abs() > NORMALIZATION_TOLERANCE {
                violations.push(NormalizationViolation { model: k, item: i, mass });
            }
            all_hard &= row.iter().all(|&v| v == 0.0 || v == 1.0);
            argmax_counts[task.hard_prediction(k, i)] += 1;
        }
        kinds.push(if all_hard {
            ModelKind::HardPredictor
        } else {
            ModelKind::SoftPredictor
        });
    }

    let mut warnings = Vec::new();
    for (class, &n) in argmax_counts.iter().enumerate() {
        if n == 0 {
            warnings.push(format!("class {class} is never predicted by any model"));
        }
    }
    let label_counts = task.oracle_labels().map(|labels| {
        let mut counts = vec![0usize; c];
        for &y in labels {
            counts[y] += 1;
        }
        counts
    });

    ValidationReport {
        num_models: h,
        num_items: d,
        num_classes: c,
        normalization_violations: violations,
        model_kinds: kinds,
        coverage: ClassCoverage {
            argmax_counts,
            label_counts,
        },
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark::ids;

    #[test]
    fn soft_task_is_clean() {
        let task = BenchmarkTask::new(ids("m", 2), ids("x", 2), 2, vec![0.3, 0.7, 0.6, 0.4, 0.2, 0.8, 0.9, 0.1], None)
            .unwrap();
        let report = validate(&task);
        assert!(report.normalization_violations.is_empty());
        assert!(report.is_clean());
        assert_eq!(report.model_kinds, vec![ModelKind::SoftPredictor; 2]);
    }

    #[test]
    fn flags_hard_predictors_and_uncovered_classes() {
        let task = BenchmarkTask::new(
            ids("m", 2),
            ids("x", 2),
            4,
            vec![
                1.0, 0.0, 0.0, 0.0, //
                0.0, 1.0, 0.0, 0.0, //
                0.4, 0.3, 0.2, 0.1, //
                0.1, 0.2, 0.7, 0.0,
            ],
            None,
        )
        .unwrap();
        let before = task.clone();
        let report = validate(&task);
        assert_eq!(report.model_kinds, vec![ModelKind::HardPredictor, ModelKind::SoftPredictor]);
        assert_eq!(report.coverage.argmax_counts, vec![2, 1, 1, 0]);
        assert!(report.warnings.iter().any(|w| w.contains("class 3")));
        assert_eq!(task, before);
    }
}
