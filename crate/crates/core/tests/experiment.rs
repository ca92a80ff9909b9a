use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dcau_core::acquisition::{dynamic_pixel_uncertainty, dynamic_weights, pixel_entropy, Strategy};
use dcau_core::config::{ExperimentConfig, Weighting};
use dcau_core::experiment::{run_experiment, run_fully_supervised, run_sweep, CycleOutcome, SweepAxis};
use dcau_core::learner::LearnerConfig;
use dcau_core::metrics::ClassIouReport;
use dcau_core::report::{emit_comparison, ComparisonReport};
use dcau_core::synth::{generate, SynthConfig};
use dcau_core::{Dataset, Session};

fn small(seed: u64) -> Arc<Dataset> {
    Arc::new(
        generate(&SynthConfig {
            num_samples: 160,
            height: 16,
            width: 16,
            ..SynthConfig::desk_profile(seed)
        })
        .unwrap(),
    )
}

fn quick(strategy: Strategy) -> ExperimentConfig {
    ExperimentConfig {
        strategy,
        initial_labeled: 10,
        per_cycle_k: 6,
        cycles: 4,
        learner: LearnerConfig {
            epochs: 3,
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn uniform_weights_select_like_entropy() {
    let ds = small(1);
    let dcau = ExperimentConfig {
        weighting: Weighting::Uniform,
        ..quick(Strategy::Dcau)
    };
    let a = run_experiment(Arc::clone(&ds), &dcau).unwrap();
    let b = run_experiment(ds, &quick(Strategy::Entropy)).unwrap();
    assert_eq!(a.records.len(), b.records.len());
    for (x, y) in a.records.iter().zip(&b.records) {
        assert_eq!(x.selected_ids, y.selected_ids, "cycle {}", x.cycle);
        assert_eq!(x.candidate_count, y.candidate_count);
    }
}

#[test]
fn identical_seed_gives_identical_records() {
    let ds = small(2);
    for strategy in Strategy::ALL {
        let a = run_experiment(Arc::clone(&ds), &quick(strategy)).unwrap();
        let b = run_experiment(Arc::clone(&ds), &quick(strategy)).unwrap();
        assert!(a.records.iter().zip(&b.records).all(|(x, y)| x.same_outcome(y)), "{strategy}");
        assert_eq!(a.final_report, b.final_report);
    }
}

#[test]
fn weights_replay_from_validation_iou() {
    let run = run_experiment(small(3), &quick(Strategy::Dcau)).unwrap();
    for r in &run.records {
        let report = ClassIouReport::from_iou(r.cycle, r.val_iou.clone());
        let replay = dynamic_weights(&report, 0.5).unwrap();
        assert_eq!(Some(&replay.weights), r.weights.as_ref(), "cycle {}", r.cycle);
    }
}

#[test]
fn budget_cuts_the_last_cycle_short() {
    let cfg = ExperimentConfig {
        total_budget: Some(14),
        ..quick(Strategy::Random)
    };
    let run = run_experiment(small(4), &cfg).unwrap();
    let sizes: Vec<usize> = run.records.iter().map(|r| r.selected_ids.len()).collect();
    assert_eq!(sizes, vec![6, 6, 2]);
    assert_eq!(run.final_labeled, 10 + 14);
}

#[test]
fn empty_pool_stops_the_loop() {
    let ds = Arc::new(
        generate(&SynthConfig {
            num_samples: 20,
            height: 8,
            width: 8,
            ..SynthConfig::desk_profile(5)
        })
        .unwrap(),
    );
    // 14 training ids, 4 initial: 10 left, k=4 -> 4, 4, 2.
    let cfg = ExperimentConfig {
        initial_labeled: 4,
        per_cycle_k: 4,
        cycles: 10,
        total_budget: Some(100),
        ..quick(Strategy::Entropy)
    };
    let mut s = Session::new(ds, cfg).unwrap();
    assert_eq!(s.splits().train.len(), 14);
    s.run_to_completion().unwrap();
    let sizes: Vec<usize> = s.records().iter().map(|r| r.selected_ids.len()).collect();
    assert_eq!(sizes, vec![4, 4, 2]);
    assert!(s.pool().unlabeled_ids.is_empty());
    assert!(s.is_finished());
}

#[test]
fn oracle_run_resumes_from_checkpoint() {
    let ds = small(6);
    let cfg = quick(Strategy::Dcau);
    let full = run_experiment(Arc::clone(&ds), &cfg).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut s = Session::new(Arc::clone(&ds), cfg).unwrap();
    for _ in 0..2 {
        assert!(matches!(s.begin_cycle().unwrap(), CycleOutcome::Completed(_)));
    }
    s.save_checkpoint(dir.path()).unwrap();
    drop(s);
    let mut resumed = Session::load_checkpoint(ds, dir.path()).unwrap();
    resumed.run_to_completion().unwrap();
    assert_eq!(resumed.records().len(), full.records.len());
    for (x, y) in resumed.records().iter().zip(&full.records) {
        assert!(x.same_outcome(y), "cycle {}", x.cycle);
    }
}

#[test]
fn literal_matches_factored_per_pixel() {
    let mut r = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..2000 {
        let k = r.random_range(2..10);
        let raw: Vec<f64> = (0..k).map(|_| r.random::<f64>().powi(3)).collect();
        let z: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|x| x / z).collect();
        let w: Vec<f64> = (0..k).map(|_| r.random::<f64>()).collect();
        let h = pixel_entropy(&p);
        let factored = h * p.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        assert!((dynamic_pixel_uncertainty(&p, &w) - factored).abs() <= 1e-12);
    }
}

#[test]
fn sweep_over_budget_gives_one_row_per_value() {
    let ds = small(7);
    let base = ExperimentConfig {
        cycles: 2,
        ..quick(Strategy::Random)
    };
    let rep = run_sweep(ds, &base, SweepAxis::PerCycleK, &[20.0, 40.0]).unwrap();
    assert_eq!(rep.rows.len(), 2);
    assert_eq!(rep.rows[0].final_labeled, 10 + 40);
    assert_eq!(rep.rows[1].final_labeled, 10 + 80);
    assert!(rep.rows.iter().all(|r| r.curve.len() == 2));
}

#[test]
fn comparison_report_contents() {
    let ds = small(9);
    let mut runs = BTreeMap::new();
    for s in [Strategy::Dcau, Strategy::Random] {
        runs.insert(s, run_experiment(Arc::clone(&ds), &quick(s)).unwrap());
    }
    let upper = run_fully_supervised(Arc::clone(&ds), &quick(Strategy::Dcau)).unwrap();
    let rep = ComparisonReport::build(&runs, Some(&upper)).unwrap();
    assert_eq!(rep.strategies.len(), 2);
    assert!(rep.strategies.iter().all(|s| s.curve.len() == 4));
    assert_eq!(rep.upper_bound.as_ref().unwrap().miou, upper.miou);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("comparison.json");
    emit_comparison(&runs, Some(&upper), &path).unwrap();
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert!(json["upper_bound"]["miou"].is_number());
    assert_eq!(json["strategies"].as_array().unwrap().len(), 2);

    let no_upper = ComparisonReport::build(&runs, None).unwrap();
    let text = serde_json::to_string(&no_upper).unwrap();
    assert!(!text.contains("upper_bound"));
}

#[test]
fn coreset_runs_and_never_repeats() {
    let run = run_experiment(small(10), &quick(Strategy::Coreset)).unwrap();
    let mut all: Vec<_> = run.records.iter().flat_map(|r| r.selected_ids.clone()).collect();
    let n = all.len();
    all.sort();
    all.dedup();
    assert_eq!(all.len(), n);
    assert_eq!(n, 24);
}
