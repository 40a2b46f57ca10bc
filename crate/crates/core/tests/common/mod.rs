//! Generators and independent reference implementations shared by the
//! integration tests. The oracles here are deliberately naive loops over the
//! raw tensors and never call into the library's vectorized helpers.

#![allow(dead_code)]

use coda_core::belief::{BeliefState, PriorMode};
use coda_core::benchmark::BenchmarkTask;
use coda_core::pbest::{compute_pbest, ClassMarginal};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};

pub fn ids(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

/// Random soft predictions; each row has a random dominant class so hard
/// predictions vary across models.
pub fn random_task(rng: &mut ChaCha8Rng, h: usize, d: usize, c: usize, labelled: bool) -> BenchmarkTask {
    let mut preds = Vec::with_capacity(h * d * c);
    for _ in 0..h * d {
        let peak = rng.random_range(0..c);
        let row: Vec<f32> = (0..c)
            .map(|j| rng.random_range(0.01f32..1.0) + if j == peak { 2.0 } else { 0.0 })
            .collect();
        let total: f32 = row.iter().sum();
        preds.extend(row.iter().map(|v| v / total));
    }
    let labels = labelled.then(|| (0..d).map(|_| rng.random_range(0..c)).collect());
    BenchmarkTask::new(ids("m", h), ids("x", d), c, preds, labels).unwrap()
}

/// One-hot predictions drawn so each model is right with its own accuracy.
pub fn hard_task(rng: &mut ChaCha8Rng, accuracies: &[f64], d: usize, c: usize) -> BenchmarkTask {
    let labels: Vec<usize> = (0..d).map(|_| rng.random_range(0..c)).collect();
    let mut preds = Vec::with_capacity(accuracies.len() * d * c);
    for &acc in accuracies {
        for &y in &labels {
            let guess = if rng.random_bool(acc) {
                y
            } else {
                (y + rng.random_range(1..c)) % c
            };
            preds.extend((0..c).map(|j| if j == guess { 1.0f32 } else { 0.0 }));
        }
    }
    BenchmarkTask::new(ids("m", accuracies.len()), ids("x", d), c, preds, Some(labels)).unwrap()
}

pub fn random_belief(rng: &mut ChaCha8Rng, h: usize, c: usize, lo: f64, hi: f64) -> BeliefState {
    let theta = (0..h * c * c).map(|_| rng.random_range(lo..hi)).collect();
    BeliefState::from_concentrations(h, c, theta, 0.01, PriorMode::Uniform).unwrap()
}

pub fn random_simplex(rng: &mut ChaCha8Rng, c: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..c).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

pub fn permute_models(task: &BenchmarkTask, order: &[usize]) -> BenchmarkTask {
    let (d, c) = (task.num_items(), task.num_classes());
    let mut preds = Vec::with_capacity(task.predictions().len());
    let mut model_ids = Vec::new();
    for &k in order {
        for i in 0..d {
            preds.extend_from_slice(task.prediction(k, i));
        }
        model_ids.push(task.model_ids()[k].clone());
    }
    BenchmarkTask::new(model_ids, task.item_ids().to_vec(), c, preds, task.oracle_labels().map(|l| l.to_vec())).unwrap()
}

fn theta_at(state: &BeliefState, k: usize, row: usize, col: usize) -> f64 {
    let c = state.num_classes();
    state.theta()[(k * c + row) * c + col]
}

fn mean_at(state: &BeliefState, k: usize, row: usize, col: usize) -> f64 {
    let c = state.num_classes();
    let mut total = 0.0;
    for j in 0..c {
        total += theta_at(state, k, row, j);
    }
    theta_at(state, k, row, col) / total
}

pub fn naive_class_marginal(task: &BenchmarkTask, state: &BeliefState) -> Vec<f64> {
    let (h, d, c) = (task.num_models(), task.num_items(), task.num_classes());
    let mut pi = vec![0.0; c];
    for (target, slot) in pi.iter_mut().enumerate() {
        for i in 0..d {
            for k in 0..h {
                for c_pred in 0..c {
                    *slot += f64::from(task.prediction(k, i)[c_pred]) * mean_at(state, k, c_pred, target);
                }
            }
        }
        *slot /= (d * h) as f64;
    }
    pi
}

pub fn naive_item_posterior(task: &BenchmarkTask, state: &BeliefState, item: usize) -> Vec<f64> {
    let (h, c) = (task.num_models(), task.num_classes());
    let mut out = vec![0.0; c];
    for (target, slot) in out.iter_mut().enumerate() {
        for k in 0..h {
            for c_pred in 0..c {
                *slot += f64::from(task.prediction(k, item)[c_pred]) * mean_at(state, k, c_pred, target);
            }
        }
        *slot /= h as f64;
    }
    out
}

/// `[k][c][c']` soft counts against the majority-score labels.
pub fn naive_empirical_confusions(task: &BenchmarkTask) -> Vec<Vec<Vec<f64>>> {
    let (h, d, c) = (task.num_models(), task.num_items(), task.num_classes());
    let mut consensus = vec![0usize; d];
    for (i, label) in consensus.iter_mut().enumerate() {
        let mut best = f64::NEG_INFINITY;
        for class in 0..c {
            let mut s = 0.0;
            for k in 0..h {
                s += f64::from(task.prediction(k, i)[class]);
            }
            if s > best {
                best = s;
                *label = class;
            }
        }
    }
    let mut out = vec![vec![vec![0.0; c]; c]; h];
    for (k, matrix) in out.iter_mut().enumerate() {
        for (i, &y) in consensus.iter().enumerate() {
            for col in 0..c {
                matrix[y][col] += f64::from(task.prediction(k, i)[col]);
            }
        }
    }
    out
}

/// Per-model correct counts and the lowest-index best model.
pub fn naive_true_best(task: &BenchmarkTask) -> (usize, Vec<usize>) {
    let labels = task.oracle_labels().unwrap();
    let mut correct = vec![0; task.num_models()];
    for (k, count) in correct.iter_mut().enumerate() {
        for (i, &y) in labels.iter().enumerate() {
            let row = task.prediction(k, i);
            let mut arg = 0;
            for j in 1..row.len() {
                if row[j] > row[arg] {
                    arg = j;
                }
            }
            if arg == y {
                *count += 1;
            }
        }
    }
    let mut best = 0;
    for k in 1..correct.len() {
        if correct[k] > correct[best] {
            best = k;
        }
    }
    (best, correct)
}

/// Frequencies with which each model's mixture draw is the largest: class
/// drawn from `pi`, then accuracy from that class's diagonal Beta.
pub fn monte_carlo_pbest(state: &BeliefState, pi: &[f64], samples: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (h, c) = (state.num_models(), state.num_classes());
    let betas: Vec<Vec<Beta<f64>>> = (0..h)
        .map(|k| {
            (0..c)
                .map(|class| {
                    let a = theta_at(state, k, class, class);
                    let b: f64 = (0..c).filter(|&j| j != class).map(|j| theta_at(state, k, class, j)).sum();
                    Beta::new(a, b).unwrap()
                })
                .collect()
        })
        .collect();
    let mut cumulative = Vec::with_capacity(c);
    let mut acc = 0.0;
    for &p in pi {
        acc += p;
        cumulative.push(acc);
    }
    let mut wins = vec![0usize; h];
    for _ in 0..samples {
        let mut best = (0, f64::NEG_INFINITY);
        for (k, model) in betas.iter().enumerate() {
            let u: f64 = rng.random::<f64>() * acc;
            let class = cumulative.iter().position(|&cp| u < cp).unwrap_or(c - 1);
            let x = model[class].sample(rng);
            if x > best.1 {
                best = (k, x);
            }
        }
        wins[best.0] += 1;
    }
    wins.iter().map(|&w| w as f64 / samples as f64).collect()
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum()
}

/// EIG with a fresh clone of the state for every hypothetical label.
pub fn clone_eig(
    state: &BeliefState,
    task: &BenchmarkTask,
    marginal: &ClassMarginal,
    item_posterior: &[f64],
    item: usize,
    grid: usize,
) -> f64 {
    let before = entropy(&compute_pbest(state, marginal, grid).unwrap().probs);
    let mut expected = 0.0;
    for (class, &w) in item_posterior.iter().enumerate() {
        let mut copy = state.clone();
        copy.apply_label(task, item, class, 1.0).unwrap();
        expected += w * entropy(&compute_pbest(&copy, marginal, grid).unwrap().probs);
    }
    before - expected
}
