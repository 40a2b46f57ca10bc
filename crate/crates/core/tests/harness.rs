mod common;

use coda_core::acquisition::{AcquisitionKind, AcquisitionMethod};
use coda_core::belief::{PriorConfig, DEFAULT_ETA};
use coda_core::benchmark::{generate_synthetic, BenchmarkTask, SyntheticSpec};
use coda_core::harness::{
    aggregate, export_report, load_summary, regret_at, run_seeds, run_selection, run_unsupervised, true_best,
    HarnessError, Report, ReportFormat, RunConfig, SelectionRun, SelectorKind, Timing, REPORT_CSV, SUMMARY_JSON,
};
use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_config(method: AcquisitionKind, selector: SelectorKind, budget: usize) -> RunConfig {
    RunConfig {
        method: AcquisitionMethod::new(method),
        selector,
        budget,
        grid_size: 513,
        seeds: vec![3, 9, 27],
        ..RunConfig::default()
    }
}

fn task() -> BenchmarkTask {
    hard_task(&mut ChaCha8Rng::seed_from_u64(21), &[0.6, 0.75, 0.5, 0.65], 120, 3)
}

fn check_run_invariants(run: &SelectionRun, budget: usize, task: &BenchmarkTask) {
    assert_eq!(run.queried_items.len(), budget);
    let mut seen = run.queried_items.clone();
    seen.sort_unstable();
    seen.dedup();
    assert_eq!(seen.len(), budget, "an item was queried twice");
    let mut total = 0.0;
    for (t, &r) in run.regret.iter().enumerate() {
        assert!(r >= 0.0);
        total += r;
        assert_eq!(run.cumulative_regret[t], total);
        assert_eq!(r, regret_at(task, run.chosen_models[t], true_best(task).unwrap().best).unwrap());
    }
    for p in &run.pbest_trace {
        assert_eq!(p.len(), task.num_models());
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn runs_satisfy_invariants_for_every_method() {
    let t = task();
    for method in [AcquisitionKind::Eig, AcquisitionKind::Random, AcquisitionKind::Uncertainty] {
        for selector in [SelectorKind::Pbest, SelectorKind::EmpiricalRisk] {
            let cfg = small_config(method, selector, 25);
            for run in run_seeds(&t, &cfg, 2).unwrap() {
                check_run_invariants(&run, 25, &t);
            }
        }
    }
}

#[test]
fn random_runs_depend_on_seed_and_repeat_exactly() {
    let t = task();
    let cfg = small_config(AcquisitionKind::Random, SelectorKind::EmpiricalRisk, 30);
    let a = run_selection(&t, &cfg, 5).unwrap();
    let b = run_selection(&t, &cfg, 5).unwrap();
    let c = run_selection(&t, &cfg, 6).unwrap();
    assert_eq!(a.queried_items, b.queried_items);
    assert_eq!(a.chosen_models, b.chosen_models);
    assert_ne!(a.queried_items, c.queried_items);
}

#[test]
fn shared_trajectories_match_independent_runs() {
    let t = task();
    let cfg = small_config(AcquisitionKind::Eig, SelectorKind::Pbest, 12);
    assert!(cfg.is_seed_independent());
    let shared = run_seeds(&t, &cfg, 1).unwrap();
    for run in &shared {
        let own = run_selection(&t, &cfg, run.seed).unwrap();
        assert_eq!(own.queried_items, run.queried_items);
        assert_eq!(own.chosen_models, run.chosen_models);
        assert_eq!(own.pbest_trace, run.pbest_trace);
    }
}

#[test]
fn empirical_risk_starts_uniform_and_follows_labels() {
    // model 2 is perfect, so after a handful of labels it leads outright
    let t = hard_task(&mut ChaCha8Rng::seed_from_u64(4), &[0.5, 0.5, 1.0, 0.5], 200, 4);
    let cfg = small_config(AcquisitionKind::Random, SelectorKind::EmpiricalRisk, 40);
    let mut first_choices = std::collections::BTreeSet::new();
    for seed in 0..20 {
        let run = run_selection(&t, &cfg, seed).unwrap();
        first_choices.insert(run.chosen_models[0]);
        assert_eq!(*run.chosen_models.last().unwrap(), 2);
    }
    assert!(first_choices.len() > 1, "step-0 choice should vary with the seed");
}

#[test]
fn easy_task_has_zero_regret_throughout() {
    let t = hard_task(&mut ChaCha8Rng::seed_from_u64(8), &[0.95, 0.6, 0.55, 0.5], 200, 3);
    let cfg = small_config(AcquisitionKind::Eig, SelectorKind::Pbest, 20);
    let run = run_selection(&t, &cfg, 0).unwrap();
    assert!(run.regret.iter().all(|&r| r == 0.0), "{:?}", run.regret);
}

#[test]
fn budget_beyond_pool_is_rejected() {
    let t = task();
    let cfg = small_config(AcquisitionKind::Random, SelectorKind::Pbest, 121);
    assert!(matches!(run_selection(&t, &cfg, 0), Err(HarnessError::InvalidConfig(_))));
    let unlabeled = t.with_labels(None).unwrap();
    let ok = small_config(AcquisitionKind::Random, SelectorKind::Pbest, 5);
    assert!(matches!(run_selection(&unlabeled, &ok, 0), Err(HarnessError::MissingLabels)));
}

#[test]
fn true_best_ignores_item_order() {
    let t = task();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..t.num_items()).collect();
    order.shuffle(&mut rng);
    let c = t.num_classes();
    let mut preds = Vec::new();
    for k in 0..t.num_models() {
        for &i in &order {
            preds.extend_from_slice(t.prediction(k, i));
        }
    }
    let labels: Vec<usize> = order.iter().map(|&i| t.oracle_labels().unwrap()[i]).collect();
    let shuffled = BenchmarkTask::new(t.model_ids().to_vec(), ids("y", t.num_items()), c, preds, Some(labels)).unwrap();
    assert_eq!(true_best(&t).unwrap(), true_best(&shuffled).unwrap());
    for k in 0..t.num_models() {
        assert_eq!(regret_at(&t, k, 1).unwrap(), regret_at(&shuffled, k, 1).unwrap());
    }
}

#[test]
fn aggregate_matches_hand_rolled_statistics() {
    let t = task();
    let best = true_best(&t).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let runs: Vec<SelectionRun> = (0..3)
        .map(|seed| {
            use rand::Rng;
            let chosen: Vec<usize> = (0..6).map(|_| rng.random_range(0..t.num_models())).collect();
            let regret: Vec<f64> = chosen.iter().map(|&k| best.regret(k)).collect();
            let cumulative_regret = regret
                .iter()
                .scan(0.0, |acc, r| {
                    *acc += r;
                    Some(*acc)
                })
                .collect();
            SelectionRun {
                seed,
                queried_items: (0..6).collect(),
                chosen_models: chosen,
                regret,
                cumulative_regret,
                pbest_trace: vec![],
                wall_time_per_step: vec![0.0; 6],
                pbest_evaluations_per_step: vec![1; 6],
            }
        })
        .collect();
    let summary = aggregate(&runs, &t).unwrap();
    assert_eq!(summary.steps.len(), 6);
    for (step, s) in summary.steps.iter().enumerate() {
        let values: Vec<f64> = runs.iter().map(|r| r.regret[step]).collect();
        let mean = (values[0] + values[1] + values[2]) / 3.0;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
        assert!((s.mean_regret - mean).abs() < 1e-12);
        assert!((s.std_regret - var.sqrt()).abs() < 1e-12);
        let cum: Vec<f64> = runs.iter().map(|r| r.cumulative_regret[step]).collect();
        assert!((s.mean_cum_regret - cum.iter().sum::<f64>() / 3.0).abs() < 1e-12);
        let hits = runs.iter().filter(|r| best.correct[r.chosen_models[step]] == best.correct[best.best]).count();
        assert_eq!(s.success_rate, hits as f64 / 3.0);
    }

    let identical = vec![runs[0].clone(); 5];
    let flat = aggregate(&identical, &t).unwrap();
    for s in &flat.steps {
        assert_eq!(s.std_regret, 0.0);
        assert!(s.success_rate == 0.0 || s.success_rate == 1.0);
    }
}

#[test]
fn near_optimal_uses_one_point_threshold() {
    // 100 items: model 0 has 90 correct, model 1 has 89, model 2 has 88
    let labels = vec![0usize; 100];
    let mut preds = Vec::new();
    for wrong in [10usize, 11, 12] {
        for i in 0..100 {
            preds.extend_from_slice(if i < wrong { &[0.0f32, 1.0] } else { &[1.0, 0.0] });
        }
    }
    let t = BenchmarkTask::new(ids("m", 3), ids("x", 100), 2, preds, Some(labels)).unwrap();
    let tb = true_best(&t).unwrap();
    assert!(tb.is_near_optimal(1));
    assert!(!tb.is_near_optimal(2));
    assert!((tb.regret(2) - 2.0).abs() < 1e-12);
}

#[test]
fn unsupervised_selection() {
    // one strong model among nine weak ones
    let mut accs = vec![0.6; 10];
    accs[6] = 0.95;
    let spec = SyntheticSpec::from_accuracies(&accs, 1500, 4, 5.0, 99);
    let t = generate_synthetic(&spec).unwrap();
    let a = run_unsupervised(&t, &PriorConfig::default(), DEFAULT_ETA, 2049).unwrap();
    let b = run_unsupervised(&t, &PriorConfig::default(), DEFAULT_ETA, 2049).unwrap();
    assert_eq!(a.chosen, 6);
    assert_eq!(a, b);
    assert_eq!(a.regret_at_0, Some(0.0));

    let same = permute_models(&t, &[2, 2, 2]);
    assert_eq!(run_unsupervised(&same, &PriorConfig::default(), DEFAULT_ETA, 2049).unwrap().chosen, 0);
}

#[test]
fn report_files_round_trip() {
    let t = task();
    let cfg = small_config(AcquisitionKind::Random, SelectorKind::EmpiricalRisk, 10);
    let runs = run_seeds(&t, &cfg, 1).unwrap();
    let summary = aggregate(&runs, &t).unwrap();
    let report = Report::new("toy", cfg, summary, Timing::from_runs(&runs, 0.25));
    let dir = tempfile::tempdir().unwrap();
    let written = export_report(&report, dir.path(), ReportFormat::Both).unwrap();
    assert_eq!(written.len(), 2);
    let csv = std::fs::read_to_string(dir.path().join(REPORT_CSV)).unwrap();
    assert_eq!(csv.lines().count(), 11);
    assert_eq!(load_summary(&dir.path().join(SUMMARY_JSON)).unwrap(), report);
}
