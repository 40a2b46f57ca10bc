mod common;

use coda_core::acquisition::{eig_score, eig_scores_memoized, select_next, AcquisitionKind, AcquisitionMethod};
use coda_core::belief::{prior_for_task, BeliefState, PriorConfig, PriorMode, DEFAULT_ETA};
use coda_core::benchmark::{generate_synthetic, BenchmarkTask, SyntheticSpec};
use coda_core::harness::true_best;
use coda_core::pbest::{compute_pbest, mean_accuracy, ClassMarginal, Marginalizer, PBestEvaluator};
use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn one_hot(c: usize, class: usize) -> Vec<f32> {
    (0..c).map(|j| if j == class { 1.0 } else { 0.0 }).collect()
}

/// Two models; items 0-1 agreed upon, items 2-3 contested.
fn toy_pool() -> BenchmarkTask {
    let a = [0, 1, 0, 1];
    let b = [0, 1, 1, 0];
    let preds: Vec<f32> = a.iter().chain(&b).flat_map(|&p| one_hot(2, p)).collect();
    BenchmarkTask::new(ids("m", 2), ids("x", 4), 2, preds, Some(vec![0, 1, 0, 1])).unwrap()
}

#[test]
fn contested_items_carry_more_information() {
    let task = toy_pool();
    // model 0 is believed slightly better
    let theta = vec![6.0, 2.0, 2.0, 6.0, 5.0, 3.0, 3.0, 5.0];
    let mut state = BeliefState::from_concentrations(2, 2, theta, 1.0, PriorMode::Uniform).unwrap();
    let labeled = vec![false; 4];
    let marginalizer = Marginalizer::new(&task, &state);
    let scores: Vec<f64> = (0..4)
        .map(|i| eig_score(&mut state, &task, &marginalizer, i, &labeled, 2049).unwrap())
        .collect();
    for i in 0..4 {
        let oracle = clone_eig(&state, &task, marginalizer.marginal(), &marginalizer.item_posterior(&task, i), i, 2049);
        assert!((oracle - scores[i]).abs() < 1e-12);
    }
    assert!(scores[2].min(scores[3]) > scores[0].max(scores[1]), "{scores:?}");
    let mut ev = PBestEvaluator::new(2049).unwrap();
    let pick = select_next(&state, &task, &labeled, &AcquisitionMethod::new(AcquisitionKind::Eig), 0, &marginalizer, &mut ev).unwrap();
    assert!(pick.item == 2 || pick.item == 3);
    let best = scores[2].max(scores[3]);
    assert!((pick.score.unwrap() - best).abs() < 1e-12);
}

#[test]
fn one_profile_pool_needs_c_evaluations() {
    let c = 3;
    let preds: Vec<f32> = (0..3 * 50).flat_map(|_| one_hot(c, 1)).collect();
    let task = BenchmarkTask::new(ids("m", 3), ids("x", 50), c, preds, None).unwrap();
    let state = prior_for_task(&task, &PriorConfig::default(), DEFAULT_ETA).unwrap();
    let marginalizer = Marginalizer::new(&task, &state);
    let items: Vec<usize> = (0..50).collect();
    let (scores, stats) = eig_scores_memoized(&state, &task, &marginalizer, &items, &mut PBestEvaluator::new(513).unwrap()).unwrap();
    assert_eq!(stats.pbest_evaluations, c);
    assert_eq!(stats.distinct_profiles, 1);
    assert!(scores.windows(2).all(|w| w[0].score == w[1].score));
}

#[test]
fn profile_evaluations_scale_with_distinct_profiles() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let task = hard_task(&mut rng, &[0.6, 0.5, 0.7], 40, 3);
    let state = prior_for_task(&task, &PriorConfig::default(), DEFAULT_ETA).unwrap();
    let marginalizer = Marginalizer::new(&task, &state);
    let items: Vec<usize> = (0..40).collect();
    let distinct: std::collections::HashSet<&[u32]> = items.iter().map(|&i| task.item_profile(i)).collect();
    let (_, stats) = eig_scores_memoized(&state, &task, &marginalizer, &items, &mut PBestEvaluator::new(513).unwrap()).unwrap();
    assert_eq!(stats.distinct_profiles, distinct.len());
    assert_eq!(stats.pbest_evaluations, 3 * distinct.len());
}

#[test]
fn sharp_beliefs_rank_like_mean_accuracy() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..10 {
        let loose = random_belief(&mut rng, 4, 3, 1.0, 10.0);
        let theta: Vec<f64> = loose.theta().iter().map(|t| t * 1000.0).collect();
        let sharp = BeliefState::from_concentrations(4, 3, theta, 0.01, PriorMode::Uniform).unwrap();
        let marginal = ClassMarginal { pi: random_simplex(&mut rng, 3) };
        let means = mean_accuracy(&sharp, &marginal);
        let by_mean = (0..4).fold(0, |b, k| if means[k] > means[b] { k } else { b });
        let p = compute_pbest(&sharp, &marginal, 8193).unwrap();
        let by_pbest = (0..4).fold(0, |b, k| if p.probs[k] > p.probs[b] { k } else { b });
        assert_eq!(by_mean, by_pbest);
    }
}

#[test]
fn synthetic_accuracies_follow_binomial_spread() {
    let accs = [0.55, 0.7, 0.85, 0.9];
    let d = 4000;
    let spec = SyntheticSpec::from_accuracies(&accs, d, 5, f64::INFINITY, 31);
    let task = generate_synthetic(&spec).unwrap();
    let tb = true_best(&task).unwrap();
    for (k, &acc) in accs.iter().enumerate() {
        let sigma = (acc * (1.0 - acc) / d as f64).sqrt();
        assert!((tb.accuracies[k] - acc).abs() < 4.0 * sigma, "model {k}: {} vs {acc}", tb.accuracies[k]);
    }
    assert_eq!(tb.best, 3);
    let labels = task.oracle_labels().unwrap();
    let mut counts = [0usize; 5];
    for &y in labels {
        counts[y] += 1;
    }
    let sigma = (0.2 * 0.8 * d as f64).sqrt();
    assert!(counts.iter().all(|&n| (n as f64 - 800.0).abs() < 4.0 * sigma), "{counts:?}");
}
