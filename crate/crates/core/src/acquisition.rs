//! Choosing which item to label next.
//!
//! The expected-information-gain criterion scores an unlabeled item by how
//! much labeling it is expected to reduce the entropy of `P_Best`:
//!
//! ```text
//! EIG(x_i) = H(P_Best) - Σ_c π̂(c | x_i) · H(P_Best^c)
//! ```
//!
//! where `P_Best^c` is recomputed after a virtual update with label `c`.
//! Random and committee-uncertainty sampling are provided as baselines.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{BeliefError, BeliefState};
use crate::benchmark::BenchmarkTask;
use crate::pbest::{
    active_window, compute_pbest, diagonal_beta, pbest_from_cdfs, BetaParams, Marginalizer, PBestError, PBestEvaluator, Scratch,
};

#[derive(Debug, Error)]
pub enum AcquisitionError {
    #[error("every item is already labeled")]
    AllLabeled,
    #[error("item {0} is already labeled")]
    AlreadyLabeled(usize),
    #[error("item {item} out of range for {num_items} items")]
    ItemOutOfRange { item: usize, num_items: usize },
    #[error("labeled mask has {got} entries, expected {expected}")]
    MaskShape { got: usize, expected: usize },
    #[error(transparent)]
    PBest(#[from] PBestError),
    #[error(transparent)]
    Belief(#[from] BeliefError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcquisitionKind {
    Eig,
    Random,
    Uncertainty,
}

impl std::fmt::Display for AcquisitionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AcquisitionKind::Eig => "eig",
            AcquisitionKind::Random => "random",
            AcquisitionKind::Uncertainty => "uncertainty",
        })
    }
}

impl std::str::FromStr for AcquisitionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "eig" => Ok(AcquisitionKind::Eig),
            "random" => Ok(AcquisitionKind::Random),
            "uncertainty" => Ok(AcquisitionKind::Uncertainty),
            other => Err(format!("unknown acquisition method {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcquisitionMethod {
    pub kind: AcquisitionKind,
    #[serde(default)]
    pub rng_seed: u64,
    /// Score only a uniform random subset of this many unlabeled items per
    /// step (EIG only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_subsample: Option<usize>,
}

impl AcquisitionMethod {
    pub fn new(kind: AcquisitionKind) -> Self {
        Self {
            kind,
            rng_seed: 0,
            candidate_subsample: None,
        }
    }

    /// Whether the query sequence can depend on `rng_seed`.
    pub fn uses_seed(&self) -> bool {
        match self.kind {
            AcquisitionKind::Random => true,
            AcquisitionKind::Eig => self.candidate_subsample.is_some(),
            AcquisitionKind::Uncertainty => false,
        }
    }
}

/// Shannon entropy in nats, with `0 · ln 0 = 0`.
pub fn entropy(dist: &[f64]) -> f64 {
    -dist.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

/// EIG of a single item, computed directly: for each hypothetical label the
/// belief state is updated in place, `P_Best` recomputed, and the state
/// restored from a snapshot.
pub fn eig_score(
    state: &mut BeliefState,
    task: &BenchmarkTask,
    marginalizer: &Marginalizer,
    item: usize,
    labeled: &[bool],
    grid_size: usize,
) -> Result<f64, AcquisitionError> {
    check_item(task, labeled, item)?;
    let marginal = marginalizer.marginal();
    let prior_entropy = entropy(&compute_pbest(state, marginal, grid_size)?.probs);
    let weights = marginalizer.item_posterior(task, item);
    let mut expected = 0.0;
    for (class, &w) in weights.iter().enumerate() {
        let token = state.snapshot();
        let hypothetical = state
            .apply_label(task, item, class, 1.0)
            .map_err(AcquisitionError::from)
            .and_then(|_| Ok(compute_pbest(state, marginal, grid_size)?));
        state.restore(token)?;
        expected += w * entropy(&hypothetical?.probs);
    }
    Ok(prior_entropy - expected)
}

fn check_item(task: &BenchmarkTask, labeled: &[bool], item: usize) -> Result<(), AcquisitionError> {
    if labeled.len() != task.num_items() {
        return Err(AcquisitionError::MaskShape {
            got: labeled.len(),
            expected: task.num_items(),
        });
    }
    if item >= task.num_items() {
        return Err(AcquisitionError::ItemOutOfRange {
            item,
            num_items: task.num_items(),
        });
    }
    if labeled[item] {
        return Err(AcquisitionError::AlreadyLabeled(item));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigScore {
    pub item: usize,
    pub score: f64,
    /// Hard prediction of every model on the item.
    pub profile_key: Vec<u32>,
}

/// What a hypothetical-entropy table is keyed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoKey {
    /// One table row per distinct hard-prediction profile: exactly `C`
    /// `P_Best` evaluations per profile.
    Profile,
    /// Share evaluations across profiles: with the class marginal held fixed,
    /// `P_Best^c` depends only on `c` and the set of models predicting `c`.
    #[default]
    Agreement,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoringStats {
    pub items_scored: usize,
    pub distinct_profiles: usize,
    pub pbest_evaluations: usize,
    #[serde(with = "duration_secs")]
    pub wall_time: Duration,
}

mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_secs_f64(f64::deserialize(d)?))
    }
}

/// EIG for `items`, computing hypothetical entropies once per distinct
/// hard-prediction profile.
pub fn eig_scores_memoized(
    state: &BeliefState,
    task: &BenchmarkTask,
    marginalizer: &Marginalizer,
    items: &[usize],
    evaluator: &mut PBestEvaluator,
) -> Result<(Vec<EigScore>, ScoringStats), AcquisitionError> {
    eig_scores_with(state, task, marginalizer, items, evaluator, MemoKey::Profile)
}

/// EIG for `items` with the given memoization key.
///
/// Hypothetical `P_Best^c` are built from cached Beta CDF grids: a virtual
/// label `c` only moves row `c` of each model, adding `eta` to the diagonal
/// concentration of models that predicted `c` and to the off-diagonal mass
/// of the rest. The belief state is never mutated.
pub fn eig_scores_with(
    state: &BeliefState,
    task: &BenchmarkTask,
    marginalizer: &Marginalizer,
    items: &[usize],
    evaluator: &mut PBestEvaluator,
    memo: MemoKey,
) -> Result<(Vec<EigScore>, ScoringStats), AcquisitionError> {
    let started = Instant::now();
    state.check_task(task)?;
    let (h, c, n) = (state.num_models(), state.num_classes(), evaluator.grid_size());
    if h < 2 {
        return Err(PBestError::TooFewModels(h).into());
    }
    for &item in items {
        if item >= task.num_items() {
            return Err(AcquisitionError::ItemOutOfRange {
                item,
                num_items: task.num_items(),
            });
        }
    }
    let marginal = marginalizer.marginal();

    evaluator.next_generation();
    let base = evaluator.mixture_cdfs(state, marginal);
    let prior_entropy = entropy(&pbest_from_cdfs(&base, h, n, &mut Scratch::new(h, n)).probs);

    // distinct profiles in order of first appearance
    let mut profile_index: HashMap<&[u32], usize> = HashMap::new();
    let mut profiles: Vec<&[u32]> = Vec::new();
    let item_profile: Vec<usize> = items
        .iter()
        .map(|&i| {
            let p = task.item_profile(i);
            *profile_index.entry(p).or_insert_with(|| {
                profiles.push(p);
                profiles.len() - 1
            })
        })
        .collect();

    let eta = state.eta();
    let words = h.div_ceil(64);
    let mut entropies = vec![0.0f64; profiles.len() * c];
    let mut evaluations = 0usize;
    for class in 0..c {
        let weight = marginal.pi[class];
        // Per model: grid shift if it predicted `class`, and if it did not.
        let mut hit_delta = vec![0.0f64; h * n];
        let mut miss_delta = vec![0.0f64; h * n];
        for k in 0..h {
            let BetaParams { a, b } = diagonal_beta(state, k, class);
            let current = evaluator.component_cdf(BetaParams { a, b });
            let hit = evaluator.component_cdf(BetaParams { a: a + eta, b });
            let miss = evaluator.component_cdf(BetaParams { a, b: b + eta });
            for j in 0..n {
                hit_delta[k * n + j] = weight * (hit[j] - current[j]);
                miss_delta[k * n + j] = weight * (miss[j] - current[j]);
            }
        }

        // Hypotheses to evaluate for this class, as agreement bitsets.
        let agreement = |profile: &[u32]| {
            let mut bits = vec![0u64; words];
            for (k, &p) in profile.iter().enumerate() {
                if p as usize == class {
                    bits[k / 64] |= 1 << (k % 64);
                }
            }
            bits
        };
        let (jobs, slot_of): (Vec<Vec<u64>>, Vec<usize>) = match memo {
            MemoKey::Profile => (profiles.iter().map(|p| agreement(p)).collect(), (0..profiles.len()).collect()),
            MemoKey::Agreement => {
                let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
                let mut jobs = Vec::new();
                let slots = profiles
                    .iter()
                    .map(|p| {
                        let bits = agreement(p);
                        *seen.entry(bits.clone()).or_insert_with(|| {
                            jobs.push(bits);
                            jobs.len() - 1
                        })
                    })
                    .collect();
                (jobs, slots)
            }
        };
        evaluations += jobs.len();

        let (lo, hi) = active_window(
            base.chunks_exact(n).chain(hit_delta.chunks_exact(n)).chain(miss_delta.chunks_exact(n)),
            n,
        );
        let w = hi - lo + 1;
        let results: Vec<f64> = jobs
            .par_iter()
            .map_init(
                || (Scratch::new(h, w), vec![0.0f64; h * w]),
                |(scratch, grids), bits| {
                    for k in 0..h {
                        let delta = if bits[k / 64] >> (k % 64) & 1 == 1 {
                            &hit_delta
                        } else {
                            &miss_delta
                        };
                        let row = k * n + lo..k * n + hi + 1;
                        for ((g, &b), &d) in grids[k * w..(k + 1) * w].iter_mut().zip(&base[row.clone()]).zip(&delta[row]) {
                            *g = b + d;
                        }
                    }
                    entropy(&pbest_from_cdfs(grids, h, w, scratch).probs)
                },
            )
            .collect();
        for (p, &slot) in slot_of.iter().enumerate() {
            entropies[p * c + class] = results[slot];
        }
    }

    let scores = items
        .iter()
        .zip(&item_profile)
        .map(|(&item, &p)| {
            let weights = marginalizer.item_posterior(task, item);
            let expected: f64 = weights.iter().zip(&entropies[p * c..(p + 1) * c]).map(|(w, e)| w * e).sum();
            EigScore {
                item,
                score: prior_entropy - expected,
                profile_key: profiles[p].to_vec(),
            }
        })
        .collect();
    let stats = ScoringStats {
        items_scored: items.len(),
        distinct_profiles: profiles.len(),
        pbest_evaluations: evaluations,
        wall_time: started.elapsed(),
    };
    Ok((scores, stats))
}

/// Entropy of the committee's mean prediction on `item`.
pub fn committee_entropy(task: &BenchmarkTask, item: usize) -> f64 {
    let c = task.num_classes();
    let mut mean = vec![0.0f64; c];
    for k in 0..task.num_models() {
        for (m, &p) in mean.iter_mut().zip(task.prediction(k, item)) {
            *m += f64::from(p);
        }
    }
    let scale = 1.0 / task.num_models() as f64;
    mean.iter_mut().for_each(|m| *m *= scale);
    entropy(&mean)
}

/// A chosen query plus any scoring instrumentation.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryChoice {
    pub item: usize,
    pub score: Option<f64>,
    pub stats: Option<ScoringStats>,
}

/// Picks the next item to label. Random draws depend only on
/// `(method.rng_seed, step)`; all argmaxes break ties toward the lowest index.
pub fn select_next(
    state: &BeliefState,
    task: &BenchmarkTask,
    labeled: &[bool],
    method: &AcquisitionMethod,
    step: usize,
    marginalizer: &Marginalizer,
    evaluator: &mut PBestEvaluator,
) -> Result<QueryChoice, AcquisitionError> {
    if labeled.len() != task.num_items() {
        return Err(AcquisitionError::MaskShape {
            got: labeled.len(),
            expected: task.num_items(),
        });
    }
    let unlabeled: Vec<usize> = (0..task.num_items()).filter(|&i| !labeled[i]).collect();
    if unlabeled.is_empty() {
        return Err(AcquisitionError::AllLabeled);
    }
    match method.kind {
        AcquisitionKind::Random => {
            let mut rng = step_rng(method.rng_seed, step, 0);
            let item = unlabeled[rng.random_range(0..unlabeled.len())];
            Ok(QueryChoice {
                item,
                score: None,
                stats: None,
            })
        }
        AcquisitionKind::Uncertainty => {
            let scored = unlabeled.iter().map(|&i| (i, committee_entropy(task, i)));
            let (item, score) = argmax_scored(scored);
            Ok(QueryChoice {
                item,
                score: Some(score),
                stats: None,
            })
        }
        AcquisitionKind::Eig => {
            let candidates = match method.candidate_subsample {
                Some(m) if m > 0 && m < unlabeled.len() => {
                    let mut rng = step_rng(method.rng_seed, step, 1);
                    let mut picked: Vec<usize> = index::sample(&mut rng, unlabeled.len(), m)
                        .into_iter()
                        .map(|j| unlabeled[j])
                        .collect();
                    picked.sort_unstable();
                    picked
                }
                _ => unlabeled,
            };
            let (scores, stats) = eig_scores_with(state, task, marginalizer, &candidates, evaluator, MemoKey::Agreement)?;
            let (item, score) = argmax_scored(scores.iter().map(|s| (s.item, s.score)));
            Ok(QueryChoice {
                item,
                score: Some(score),
                stats: Some(stats),
            })
        }
    }
}

fn step_rng(seed: u64, step: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((step as u64) << 1 | purpose);
    rng
}

/// First maximum in iteration order (inputs arrive in ascending item order).
fn argmax_scored(scores: impl Iterator<Item = (usize, f64)>) -> (usize, f64) {
    let mut best: Option<(usize, f64)> = None;
    for (item, score) in scores {
        match best {
            Some((_, s)) if !(score > s) => {}
            _ => best = Some((item, score)),
        }
    }
    best.expect("at least one candidate")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::{prior_for_task, PriorConfig, PriorMode};
    use crate::benchmark::ids;

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&[1.0, 0.0]), 0.0);
        assert!((entropy(&[0.25; 4]) - 4f64.ln()).abs() < 1e-15);
        assert!((entropy(&[0.5, 0.5]) - 0.693_147_180_559_945_3).abs() < 1e-15);
    }

    #[test]
    fn uncertainty_picks_max_entropy_row() {
        let task = BenchmarkTask::new(ids("m", 2), ids("x", 2), 2, vec![0.9, 0.1, 0.5, 0.5, 0.9, 0.1, 0.5, 0.5], None)
            .unwrap();
        let state = prior_for_task(&task, &PriorConfig::default(), 0.01).unwrap();
        let marginalizer = Marginalizer::new(&task, &state);
        let mut evaluator = PBestEvaluator::new(65).unwrap();
        let method = AcquisitionMethod::new(AcquisitionKind::Uncertainty);
        let choice = select_next(&state, &task, &[false, false], &method, 0, &marginalizer, &mut evaluator).unwrap();
        assert_eq!(choice.item, 1);
    }

    #[test]
    fn random_is_deterministic_and_skips_labeled() {
        let task = BenchmarkTask::new(ids("m", 2), ids("x", 6), 2, [1.0, 0.0].repeat(12), None).unwrap();
        let state = prior_for_task(&task, &PriorConfig::default(), 0.01).unwrap();
        let marginalizer = Marginalizer::new(&task, &state);
        let mut evaluator = PBestEvaluator::new(17).unwrap();
        let method = AcquisitionMethod {
            rng_seed: 42,
            ..AcquisitionMethod::new(AcquisitionKind::Random)
        };
        let labeled = [true, false, true, false, false, true];
        let draw = |step, ev: &mut PBestEvaluator| {
            select_next(&state, &task, &labeled, &method, step, &marginalizer, ev).unwrap().item
        };
        let first: Vec<usize> = (0..20).map(|s| draw(s, &mut evaluator)).collect();
        let second: Vec<usize> = (0..20).map(|s| draw(s, &mut evaluator)).collect();
        assert_eq!(first, second);
        assert!(first.iter().all(|&i| !labeled[i]));
        let all = [true; 6];
        assert!(matches!(
            select_next(&state, &task, &all, &method, 0, &marginalizer, &mut evaluator),
            Err(AcquisitionError::AllLabeled)
        ));
    }

    #[test]
    fn eig_rejects_labeled_items() {
        let task = BenchmarkTask::new(ids("m", 2), ids("x", 2), 2, vec![0.9, 0.1, 0.5, 0.5, 0.2, 0.8, 0.5, 0.5], None)
            .unwrap();
        let mut state = prior_for_task(&task, &PriorConfig::default(), 0.01).unwrap();
        let marginalizer = Marginalizer::new(&task, &state);
        assert!(matches!(
            eig_score(&mut state, &task, &marginalizer, 0, &[true, false], 33),
            Err(AcquisitionError::AlreadyLabeled(0))
        ));
        assert!(eig_score(&mut state, &task, &marginalizer, 1, &[true, false], 33).is_ok());
    }

    #[test]
    fn identical_models_have_zero_eig() {
        let row = vec![0.7, 0.2, 0.1, 0.1, 0.1, 0.8, 0.3, 0.3, 0.4];
        let task = BenchmarkTask::new(ids("m", 2), ids("x", 3), 3, row.repeat(2), None).unwrap();
        let mut state = prior_for_task(&task, &PriorConfig::default(), 0.01).unwrap();
        let marginalizer = Marginalizer::new(&task, &state);
        let labeled = [false; 3];
        for item in 0..3 {
            let eig = eig_score(&mut state, &task, &marginalizer, item, &labeled, 257).unwrap();
            assert!(eig.abs() < 1e-6, "item {item}: {eig}");
        }
    }

    #[test]
    fn profile_memo_counts_evaluations() {
        let task = BenchmarkTask::new(ids("m", 3), ids("x", 4), 3, [0.0, 1.0, 0.0].repeat(12), None).unwrap();
        let state = BeliefState::from_concentrations(3, 3, (1..=27).map(f64::from).collect(), 0.01, PriorMode::Consensus)
            .unwrap();
        let marginalizer = Marginalizer::new(&task, &state);
        let mut evaluator = PBestEvaluator::new(129).unwrap();
        let (scores, stats) = eig_scores_memoized(&state, &task, &marginalizer, &[0, 1, 2, 3], &mut evaluator).unwrap();
        assert_eq!(stats.pbest_evaluations, 3);
        assert_eq!(stats.distinct_profiles, 1);
        assert!(scores.windows(2).all(|w| w[0].score == w[1].score));
    }
}
