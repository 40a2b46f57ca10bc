//! Probability that each model is the most accurate.
//!
//! Each model's accuracy is a mixture over true classes of the Beta marginal
//! of its diagonal confusion cell, weighted by the estimated class marginal.
//! `P_Best[k]` is the probability that model `k`'s draw exceeds every other
//! model's draw:
//!
//! ```text
//! P_Best[k] = ∫ f_k(x) Π_{l≠k} F_l(x) dx = ∫ Π_{l≠k} F_l dF_k
//! ```
//!
//! evaluated with a trapezoidal rule on a uniform grid over `[0, 1]`.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{BeliefState, ConfusionTensor};
use crate::benchmark::BenchmarkTask;
use crate::special::{beta_cdf, beta_pdf};

pub const DEFAULT_GRID_SIZE: usize = 2049;
/// Endpoint abscissae for density evaluation are clipped to `[ε, 1-ε]`.
pub const ENDPOINT_EPSILON: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum PBestError {
    #[error("grid size must be at least 3, got {0}")]
    GridTooSmall(usize),
    #[error("need at least 2 models, got {0}")]
    TooFewModels(usize),
    #[error("class marginal has {got} entries, expected {expected}")]
    MarginalShape { got: usize, expected: usize },
}

/// Estimated prevalence of each true class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMarginal {
    pub pi: Vec<f64>,
}

/// Per-item class posteriors, `|D| x C` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemClassPosterior {
    pub num_classes: usize,
    pub pi_given_item: Vec<f64>,
}

impl ItemClassPosterior {
    pub fn row(&self, item: usize) -> &[f64] {
        &self.pi_given_item[item * self.num_classes..(item + 1) * self.num_classes]
    }
}

/// `π̂(c) = 1/(|D||H|) Σ_i Σ_k Σ_c' p[k,i,c'] · M[k,c',c]` with `M` the
/// posterior-mean confusions.
pub fn class_marginal(task: &BenchmarkTask, state: &BeliefState) -> ClassMarginal {
    class_marginal_from(task, &state.mean_confusions())
}

pub(crate) fn class_marginal_from(task: &BenchmarkTask, mean: &ConfusionTensor) -> ClassMarginal {
    let c = task.num_classes();
    let mut pi = vec![0.0f64; c];
    for k in 0..task.num_models() {
        // Σ_i p[k,i,c'] is precomputed per model
        for (c_pred, &mass) in task.class_mass(k).iter().enumerate() {
            for (p, &m) in pi.iter_mut().zip(mean.row(k, c_pred)) {
                *p += mass * m;
            }
        }
    }
    let scale = 1.0 / (task.num_items() * task.num_models()) as f64;
    pi.iter_mut().for_each(|p| *p *= scale);
    ClassMarginal { pi }
}

/// `π̂(c | x_i)`: the class marginal restricted to a single item.
pub fn item_class_posterior(task: &BenchmarkTask, state: &BeliefState, item: usize) -> Vec<f64> {
    item_class_posterior_from(task, &state.mean_confusions(), item)
}

pub(crate) fn item_class_posterior_from(task: &BenchmarkTask, mean: &ConfusionTensor, item: usize) -> Vec<f64> {
    let c = task.num_classes();
    let mut out = vec![0.0f64; c];
    for k in 0..task.num_models() {
        for (c_pred, &p) in task.prediction(k, item).iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let p = f64::from(p);
            for (o, &m) in out.iter_mut().zip(mean.row(k, c_pred)) {
                *o += p * m;
            }
        }
    }
    let scale = 1.0 / task.num_models() as f64;
    out.iter_mut().for_each(|o| *o *= scale);
    out
}

/// Item posteriors for every item in the pool.
pub fn item_class_posteriors(task: &BenchmarkTask, state: &BeliefState) -> ItemClassPosterior {
    let mean = state.mean_confusions();
    let mut pi_given_item = Vec::with_capacity(task.num_items() * task.num_classes());
    for i in 0..task.num_items() {
        pi_given_item.extend(item_class_posterior_from(task, &mean, i));
    }
    ItemClassPosterior {
        num_classes: task.num_classes(),
        pi_given_item,
    }
}

/// Mean confusions and class marginal captured at one point in time.
///
/// Scoring holds the marginal fixed while hypothetical labels are tried.
#[derive(Debug, Clone)]
pub struct Marginalizer {
    mean: ConfusionTensor,
    marginal: ClassMarginal,
}

impl Marginalizer {
    pub fn new(task: &BenchmarkTask, state: &BeliefState) -> Self {
        let mean = state.mean_confusions();
        let marginal = class_marginal_from(task, &mean);
        Self { mean, marginal }
    }

    /// Uses current confusions for item posteriors but a fixed class marginal.
    pub fn with_marginal(state: &BeliefState, marginal: ClassMarginal) -> Self {
        Self {
            mean: state.mean_confusions(),
            marginal,
        }
    }

    pub fn marginal(&self) -> &ClassMarginal {
        &self.marginal
    }

    pub fn mean_confusions(&self) -> &ConfusionTensor {
        &self.mean
    }

    pub fn item_posterior(&self, task: &BenchmarkTask, item: usize) -> Vec<f64> {
        item_class_posterior_from(task, &self.mean, item)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub a: f64,
    pub b: f64,
}

impl BetaParams {
    pub fn mean(&self) -> f64 {
        self.a / (self.a + self.b)
    }
}

/// A model's accuracy distribution: Beta components weighted by class prevalence.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaMixture {
    pub weights: Vec<f64>,
    pub components: Vec<BetaParams>,
}

impl BetaMixture {
    pub fn pdf(&self, x: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.components)
            .map(|(w, p)| if *w == 0.0 { 0.0 } else { w * beta_pdf(p.a, p.b, x) })
            .sum()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.components)
            .map(|(w, p)| w * beta_cdf(p.a, p.b, x))
            .sum()
    }
}

/// Beta marginal of each diagonal cell: `a = θ[k,c,c]`, `b = Σ_{c'≠c} θ[k,c,c']`.
/// Indexed `[model][class]`.
pub fn diagonal_betas(state: &BeliefState) -> Vec<Vec<BetaParams>> {
    (0..state.num_models())
        .map(|k| {
            (0..state.num_classes())
                .map(|c| diagonal_beta(state, k, c))
                .collect()
        })
        .collect()
}

#[inline]
pub(crate) fn diagonal_beta(state: &BeliefState, model: usize, class: usize) -> BetaParams {
    let row = state.row(model, class);
    let a = row[class];
    let b = row
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != class)
        .map(|(_, &t)| t)
        .sum();
    BetaParams { a, b }
}

pub fn accuracy_mixtures(state: &BeliefState, marginal: &ClassMarginal) -> Vec<BetaMixture> {
    diagonal_betas(state)
        .into_iter()
        .map(|components| BetaMixture {
            weights: marginal.pi.clone(),
            components,
        })
        .collect()
}

/// How the max-draw integral is discretized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureRule {
    /// Trapezoid in the measure `dF_k`: each cell contributes its exact CDF
    /// increment times the mean of `Π_{l≠k} F_l` at the cell ends. Robust to
    /// the singular densities of Beta components with `a < 1` or `b < 1`.
    #[default]
    CdfIncrement,
    /// Trapezoid on `f_k(x) Π_{l≠k} F_l(x)`, with the endpoint abscissae
    /// clipped to `ε` and `1 - ε`.
    Density,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PBest {
    pub probs: Vec<f64>,
    pub grid_size: usize,
    /// Sum of the per-model integrals before renormalization.
    pub raw_mass: f64,
}

/// `P_Best` from the current beliefs with the default quadrature rule.
pub fn compute_pbest(state: &BeliefState, marginal: &ClassMarginal, grid_size: usize) -> Result<PBest, PBestError> {
    compute_pbest_with(state, marginal, grid_size, QuadratureRule::default())
}

pub fn compute_pbest_with(
    state: &BeliefState,
    marginal: &ClassMarginal,
    grid_size: usize,
    rule: QuadratureRule,
) -> Result<PBest, PBestError> {
    if marginal.pi.len() != state.num_classes() {
        return Err(PBestError::MarginalShape {
            got: marginal.pi.len(),
            expected: state.num_classes(),
        });
    }
    max_draw_probabilities(&accuracy_mixtures(state, marginal), grid_size, rule)
}

/// Probability that each mixture's draw is the largest.
pub fn max_draw_probabilities(
    mixtures: &[BetaMixture],
    grid_size: usize,
    rule: QuadratureRule,
) -> Result<PBest, PBestError> {
    if grid_size < 3 {
        return Err(PBestError::GridTooSmall(grid_size));
    }
    if mixtures.len() < 2 {
        return Err(PBestError::TooFewModels(mixtures.len()));
    }
    let n = grid_size;
    let h = mixtures.len();
    let nodes = grid_nodes(n);
    let clipped = |x: f64| x.clamp(ENDPOINT_EPSILON, 1.0 - ENDPOINT_EPSILON);

    let mut probs = vec![0.0; h];
    let mut scratch = Scratch::new(h, n);
    match rule {
        QuadratureRule::CdfIncrement => {
            let mut cdfs = Vec::with_capacity(h * n);
            for m in mixtures {
                cdfs.extend(nodes.iter().map(|&x| m.cdf(x)));
            }
            cdf_increment_rule(&cdfs, h, n, &mut scratch, &mut probs);
        }
        QuadratureRule::Density => {
            let mut cdfs = Vec::with_capacity(h * n);
            let mut pdfs = Vec::with_capacity(h * n);
            for m in mixtures {
                cdfs.extend(nodes.iter().map(|&x| m.cdf(clipped(x))));
                pdfs.extend(nodes.iter().map(|&x| m.pdf(clipped(x))));
            }
            density_rule(&pdfs, &cdfs, h, n, &mut scratch, &mut probs);
        }
    }
    Ok(finish(probs, n))
}

fn finish(mut probs: Vec<f64>, grid_size: usize) -> PBest {
    let raw_mass: f64 = probs.iter().sum();
    if raw_mass > 0.0 && raw_mass.is_finite() {
        probs.iter_mut().for_each(|p| *p /= raw_mass);
    } else {
        let uniform = 1.0 / probs.len() as f64;
        probs.iter_mut().for_each(|p| *p = uniform);
    }
    PBest {
        probs,
        grid_size,
        raw_mass,
    }
}

pub(crate) fn grid_nodes(n: usize) -> Vec<f64> {
    let last = (n - 1) as f64;
    (0..n).map(|j| j as f64 / last).collect()
}

pub(crate) struct Scratch {
    suffix: Vec<f64>,
    prefix: Vec<f64>,
    others: Vec<f64>,
}

impl Scratch {
    pub(crate) fn new(h: usize, n: usize) -> Self {
        Self {
            suffix: vec![0.0; h * n],
            prefix: vec![0.0; n],
            others: vec![0.0; n],
        }
    }

    fn fit(&mut self, h: usize, n: usize) {
        self.suffix.resize(h * n, 0.0);
        self.prefix.resize(n, 0.0);
        self.others.resize(n, 0.0);
    }

    /// Leaves `suffix[k] = Π_{l>k} F_l` and resets `prefix` to ones.
    fn products(&mut self, cdfs: &[f64], h: usize, n: usize) {
        self.fit(h, n);
        self.suffix[(h - 1) * n..h * n].fill(1.0);
        for k in (0..h - 1).rev() {
            let (lower, upper) = self.suffix.split_at_mut((k + 1) * n);
            let next = &upper[..n];
            let f = &cdfs[(k + 1) * n..(k + 2) * n];
            for ((s, &u), &fv) in lower[k * n..].iter_mut().zip(next).zip(f) {
                *s = u * fv;
            }
        }
        self.prefix[..n].fill(1.0);
    }

    /// `others = Π_{l≠k} F_l`, then folds `F_k` into the prefix.
    fn others_for(&mut self, cdfs: &[f64], k: usize, n: usize) {
        let suffix = &self.suffix[k * n..(k + 1) * n];
        for ((o, &p), &s) in self.others[..n].iter_mut().zip(&self.prefix[..n]).zip(suffix) {
            *o = p * s;
        }
        let f = &cdfs[k * n..(k + 1) * n];
        for (p, &fv) in self.prefix[..n].iter_mut().zip(f) {
            *p *= fv;
        }
    }
}

/// `cdfs` is `h x n` row-major, one mixture CDF per model on the grid.
pub(crate) fn cdf_increment_rule(cdfs: &[f64], h: usize, n: usize, scratch: &mut Scratch, out: &mut [f64]) {
    scratch.products(cdfs, h, n);
    for (k, slot) in out.iter_mut().enumerate().take(h) {
        scratch.others_for(cdfs, k, n);
        let f = &cdfs[k * n..(k + 1) * n];
        let g = &scratch.others[..n];
        let mut acc = 0.0;
        for j in 0..n - 1 {
            acc += (f[j + 1] - f[j]) * (g[j] + g[j + 1]);
        }
        *slot = 0.5 * acc;
    }
}

fn density_rule(pdfs: &[f64], cdfs: &[f64], h: usize, n: usize, scratch: &mut Scratch, out: &mut [f64]) {
    let step = 1.0 / (n - 1) as f64;
    scratch.products(cdfs, h, n);
    for (k, slot) in out.iter_mut().enumerate().take(h) {
        scratch.others_for(cdfs, k, n);
        let f = &pdfs[k * n..(k + 1) * n];
        let g = &scratch.others[..n];
        let interior: f64 = (1..n - 1).map(|j| f[j] * g[j]).sum();
        *slot = step * (interior + 0.5 * (f[0] * g[0] + f[n - 1] * g[n - 1]));
    }
}

/// Posterior-mean accuracy `Σ_c π̂(c) · M[k,c,c]` per model.
pub fn mean_accuracy(state: &BeliefState, marginal: &ClassMarginal) -> Vec<f64> {
    let mean = state.mean_confusions();
    (0..state.num_models())
        .map(|k| {
            marginal
                .pi
                .iter()
                .enumerate()
                .map(|(c, &p)| p * mean.get(k, c, c))
                .sum()
        })
        .collect()
}

/// Index of the most probable best model; lowest index wins ties.
pub fn select_model(pbest: &PBest) -> usize {
    crate::belief::argmax(&pbest.probs)
}

/// Cached evaluator for repeated `P_Best` computations on one grid.
///
/// Beta CDF grids are cached by their exact `(a, b)` bits; a label changes
/// only one row per model, so most grids carry over between steps.
#[derive(Debug)]
pub struct PBestEvaluator {
    grid_size: usize,
    nodes: Vec<f64>,
    cache: HashMap<(u64, u64), (Arc<[f64]>, u64)>,
    generation: u64,
}

impl PBestEvaluator {
    pub fn new(grid_size: usize) -> Result<Self, PBestError> {
        if grid_size < 3 {
            return Err(PBestError::GridTooSmall(grid_size));
        }
        Ok(Self {
            grid_size,
            nodes: grid_nodes(grid_size),
            cache: HashMap::new(),
            generation: 0,
        })
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    /// CDF of `Beta(a, b)` on the grid.
    pub fn component_cdf(&mut self, params: BetaParams) -> Arc<[f64]> {
        let key = (params.a.to_bits(), params.b.to_bits());
        let generation = self.generation;
        if let Some((grid, used)) = self.cache.get_mut(&key) {
            *used = generation;
            return Arc::clone(grid);
        }
        let grid: Arc<[f64]> = self.nodes.iter().map(|&x| beta_cdf(params.a, params.b, x)).collect();
        self.cache.insert(key, (Arc::clone(&grid), generation));
        grid
    }

    /// Starts a new evaluation round, dropping grids unused in the previous one.
    pub fn next_generation(&mut self) {
        let keep_from = self.generation;
        self.cache.retain(|_, (_, used)| *used >= keep_from);
        self.generation += 1;
    }

    /// Mixture CDFs for every model, `|H| x n` row-major.
    pub fn mixture_cdfs(&mut self, state: &BeliefState, marginal: &ClassMarginal) -> Vec<f64> {
        let n = self.grid_size;
        let mut out = vec![0.0; state.num_models() * n];
        for k in 0..state.num_models() {
            let row = &mut out[k * n..(k + 1) * n];
            for (c, &w) in marginal.pi.iter().enumerate() {
                let grid = self.component_cdf(diagonal_beta(state, k, c));
                for (o, &g) in row.iter_mut().zip(grid.iter()) {
                    *o += w * g;
                }
            }
        }
        out
    }

    pub fn evaluate(&mut self, state: &BeliefState, marginal: &ClassMarginal) -> Result<PBest, PBestError> {
        if state.num_models() < 2 {
            return Err(PBestError::TooFewModels(state.num_models()));
        }
        if marginal.pi.len() != state.num_classes() {
            return Err(PBestError::MarginalShape {
                got: marginal.pi.len(),
                expected: state.num_classes(),
            });
        }
        let (h, n) = (state.num_models(), self.grid_size);
        let cdfs = self.mixture_cdfs(state, marginal);
        let (lo, hi) = active_window(cdfs.chunks_exact(n), n);
        let window: Vec<f64> = cdfs.chunks_exact(n).flat_map(|row| &row[lo..=hi]).copied().collect();
        let mut pbest = pbest_from_cdfs(&window, h, hi - lo + 1, &mut Scratch::new(0, 0));
        pbest.grid_size = n;
        Ok(pbest)
    }
}

pub(crate) fn pbest_from_cdfs(cdfs: &[f64], h: usize, n: usize, scratch: &mut Scratch) -> PBest {
    let mut probs = vec![0.0; h];
    cdf_increment_rule(cdfs, h, n, scratch, &mut probs);
    finish(probs, n)
}

/// Smallest node range `lo..=hi` outside of which every row of `rows`
/// (each of length `n`) is constant. Cells outside it add exactly zero to
/// the increment rule, so restricting to it leaves the result unchanged.
pub(crate) fn active_window<'a>(rows: impl Iterator<Item = &'a [f64]>, n: usize) -> (usize, usize) {
    let (mut lo, mut hi) = (n - 1, 0);
    for row in rows {
        if let Some(j) = (0..lo).find(|&j| row[j + 1] != row[j]) {
            lo = j;
        }
        if let Some(j) = (hi..n - 1).rev().find(|&j| row[j + 1] != row[j]) {
            hi = hi.max(j + 1);
        }
    }
    if lo >= hi {
        (0, 1)
    } else {
        (lo, hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::PriorMode;

    fn single(a: f64, b: f64) -> BetaMixture {
        BetaMixture {
            weights: vec![1.0],
            components: vec![BetaParams { a, b }],
        }
    }

    #[test]
    fn closed_form_two_mixtures() {
        // P(X1 > X2) for X1 ~ Beta(2,1), X2 ~ U(0,1) is ∫ 2x · x dx = 2/3
        for rule in [QuadratureRule::CdfIncrement, QuadratureRule::Density] {
            let p = max_draw_probabilities(&[single(2.0, 1.0), single(1.0, 1.0)], 2049, rule).unwrap();
            assert!((p.probs[0] - 2.0 / 3.0).abs() < 1e-3, "{rule:?}: {:?}", p.probs);
            assert!((p.probs[1] - 1.0 / 3.0).abs() < 1e-3);
        }
    }

    #[test]
    fn identical_models_split_evenly() {
        let theta = [3.0, 1.0, 2.0, 5.0].repeat(2);
        let state = BeliefState::from_concentrations(2, 2, theta, 0.01, PriorMode::Consensus).unwrap();
        let marginal = ClassMarginal { pi: vec![0.3, 0.7] };
        let p = compute_pbest(&state, &marginal, DEFAULT_GRID_SIZE).unwrap();
        assert!((p.probs[0] - 0.5).abs() < 1e-6);
        assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_beta_examples() {
        let state = BeliefState::from_concentrations(
            2,
            3,
            vec![4.0, 5.0, 3.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0],
            0.01,
            PriorMode::Consensus,
        )
        .unwrap();
        let betas = diagonal_betas(&state);
        assert_eq!(betas[0][0], BetaParams { a: 4.0, b: 8.0 });
        assert_eq!(betas[1][1], BetaParams { a: 1.0, b: 2.0 });
        let mean = state.mean_confusions();
        for k in 0..2 {
            for c in 0..3 {
                assert!((betas[k][c].mean() - mean.get(k, c, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn select_model_breaks_ties_low() {
        let mk = |probs: Vec<f64>| PBest {
            probs,
            grid_size: 3,
            raw_mass: 1.0,
        };
        assert_eq!(select_model(&mk(vec![0.2, 0.7, 0.1])), 1);
        assert_eq!(select_model(&mk(vec![0.5, 0.5])), 0);
        assert_eq!(select_model(&mk(vec![0.25; 4])), 0);
    }

    #[test]
    fn mean_accuracy_extremes() {
        let c = 3;
        let mut theta = Vec::new();
        for _ in 0..2 {
            for row in 0..c {
                for col in 0..c {
                    theta.push(if row == col { 1e12 } else { 1e-12 });
                }
            }
        }
        let identity = BeliefState::from_concentrations(2, c, theta, 0.01, PriorMode::Consensus).unwrap();
        let marginal = ClassMarginal { pi: vec![0.2, 0.5, 0.3] };
        for acc in mean_accuracy(&identity, &marginal) {
            assert!((acc - 1.0).abs() < 1e-9);
        }
        let uniform = BeliefState::from_concentrations(2, c, vec![2.0; 18], 0.01, PriorMode::Uniform).unwrap();
        for acc in mean_accuracy(&uniform, &marginal) {
            assert!((acc - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn evaluator_matches_direct_computation() {
        let theta: Vec<f64> = (0..27).map(|i| 0.5 + (i * 7 % 11) as f64).collect();
        let state = BeliefState::from_concentrations(3, 3, theta, 0.01, PriorMode::Consensus).unwrap();
        let marginal = ClassMarginal { pi: vec![0.5, 0.2, 0.3] };
        let direct = compute_pbest(&state, &marginal, 513).unwrap();
        let mut evaluator = PBestEvaluator::new(513).unwrap();
        let cached = evaluator.evaluate(&state, &marginal).unwrap();
        for (a, b) in direct.probs.iter().zip(&cached.probs) {
            assert!((a - b).abs() < 1e-14);
        }
        evaluator.next_generation();
        evaluator.next_generation();
        let again = evaluator.evaluate(&state, &marginal).unwrap();
        assert_eq!(again, cached);
    }

    #[test]
    fn rejects_bad_arguments() {
        let state = BeliefState::from_concentrations(2, 2, vec![1.0; 8], 0.01, PriorMode::Uniform).unwrap();
        let marginal = ClassMarginal { pi: vec![0.5, 0.5] };
        assert_eq!(compute_pbest(&state, &marginal, 2), Err(PBestError::GridTooSmall(2)));
        let bad = ClassMarginal { pi: vec![1.0] };
        assert!(matches!(compute_pbest(&state, &bad, 9), Err(PBestError::MarginalShape { .. })));
        assert_eq!(
            max_draw_probabilities(&[single(1.0, 1.0)], 9, QuadratureRule::CdfIncrement),
            Err(PBestError::TooFewModels(1))
        );
    }
}
