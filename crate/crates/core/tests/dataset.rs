use proptest::prelude::*;

use dcau_core::synth::{generate, SynthConfig};
use dcau_core::tensor::{ProbMap, PROB_EPSILON};
use dcau_core::{load_dataset, write_dataset};

#[test]
fn write_then_load_is_identity_for_50_generated_datasets() {
    for seed in 0..50u64 {
        let cfg = SynthConfig {
            num_samples: 1 + (seed as usize % 4),
            height: 1 + (seed as usize % 7),
            width: 1 + (seed as usize * 3 % 5),
            noise_sigma: 0.1,
            ..SynthConfig::desk_profile(seed)
        };
        let ds = generate(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back, ds, "seed {seed}");
    }
}

proptest! {
    #[test]
    fn learner_output_rows_are_renormalized(raw in prop::collection::vec(0.0f64..3.0, 4 * 3)) {
        let pm = ProbMap::from_learner_output("x".into(), 2, 2, 3, raw).unwrap();
        for row in pm.rows() {
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| p >= PROB_EPSILON / 3.0));
        }
    }
}
