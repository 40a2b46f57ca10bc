use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BenchmarkError, BenchmarkTask};

/// Parameters of a synthetic Dawid-Skene style benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_models: usize,
    pub num_items: usize,
    pub num_classes: usize,
    /// `|H| x C x C`, row `c` of model `k` is `P(predicted | true = c)`.
    pub true_confusions: Vec<f64>,
    pub class_prevalence: Vec<f64>,
    /// Mass on the sampled class is `sharpness / (sharpness + C - 1)`;
    /// `f64::INFINITY` emits one-hot rows.
    pub sharpness: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Confusions with `accuracies[k]` on the diagonal and the remaining mass
    /// spread evenly over the other classes; uniform class prevalence.
    pub fn from_accuracies(
        accuracies: &[f64],
        num_items: usize,
        num_classes: usize,
        sharpness: f64,
        seed: u64,
    ) -> Self {
        let c = num_classes;
        let mut true_confusions = Vec::with_capacity(accuracies.len() * c * c);
        for &acc in accuracies {
            let off = if c > 1 { (1.0 - acc) / (c - 1) as f64 } else { 0.0 };
            for row in 0..c {
                for col in 0..c {
                    true_confusions.push(if row == col { acc } else { off });
                }
            }
        }
        Self {
            num_models: accuracies.len(),
            num_items,
            num_classes,
            true_confusions,
            class_prevalence: vec![1.0 / c as f64; c],
            sharpness,
            seed,
        }
    }

    fn check(&self) -> Result<(), BenchmarkError> {
        let (h, c) = (self.num_models, self.num_classes);
        let bad = |m: String| Err(BenchmarkError::InvalidSynthetic(m));
        if self.true_confusions.len() != h * c * c {
            return bad(format!(
                "true_confusions has {} entries, expected {h}x{c}x{c}",
                self.true_confusions.len()
            ));
        }
        if self.class_prevalence.len() != c {
            return bad(format!("class_prevalence has {} entries, expected {c}", self.class_prevalence.len()));
        }
        if !(self.sharpness > 0.0) {
            return bad(format!("sharpness must be positive, got {}", self.sharpness));
        }
        if !is_simplex(&self.class_prevalence) {
            return bad("class_prevalence is not a probability vector".into());
        }
        for (r, row) in self.true_confusions.chunks_exact(c).enumerate() {
            if !is_simplex(row) {
                return bad(format!("confusion row {} of model {} is not stochastic", r % c, r / c));
            }
        }
        Ok(())
    }
}

fn is_simplex(v: &[f64]) -> bool {
    v.iter().all(|&p| p.is_finite() && p >= 0.0) && (v.iter().sum::<f64>() - 1.0).abs() <= 1e-9
}

/// Samples a labelled task: a true class per item from the prevalence, then
/// a predicted class per model from that model's confusion row.
///
/// The output is a pure function of `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<BenchmarkTask, BenchmarkError> {
    spec.check()?;
    let (h, d, c) = (spec.num_models, spec.num_items, spec.num_classes);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let prevalence = WeightedIndex::new(&spec.class_prevalence)
        .map_err(|e| BenchmarkError::InvalidSynthetic(e.to_string()))?;
    let rows = spec
        .true_confusions
        .chunks_exact(c)
        .map(WeightedIndex::new)
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| BenchmarkError::InvalidSynthetic(e.to_string()))?;

    let (hit, miss) = if spec.sharpness.is_infinite() {
        (1.0f32, 0.0f32)
    } else {
        let denom = spec.sharpness + (c - 1) as f64;
        ((spec.sharpness / denom) as f32, (1.0 / denom) as f32)
    };

    let mut labels = Vec::with_capacity(d);
    let mut drawn = vec![0usize; h * d];
    for i in 0..d {
        let y = prevalence.sample(&mut rng);
        labels.push(y);
        for k in 0..h {
            drawn[k * d + i] = rows[k * c + y].sample(&mut rng);
        }
    }

    let mut predictions = vec![miss; h * d * c];
    for (row, &class) in predictions.chunks_exact_mut(c).zip(&drawn) {
        row[class] = hit;
    }

    let width = (h.max(1) - 1).to_string().len().max(2);
    let model_ids = (0..h).map(|k| format!("model-{k:0width$}")).collect();
    let item_width = (d.max(1) - 1).to_string().len().max(4);
    let item_ids = (0..d).map(|i| format!("item-{i:0item_width$}")).collect();
    BenchmarkTask::new(model_ids, item_ids, c, predictions, Some(labels))
}
