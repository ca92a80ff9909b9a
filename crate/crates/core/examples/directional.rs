//! Multi-seed strategy comparison on the desk profile.
//!
//! `cargo run --release -p dcau-core --example directional -- [seeds]`;
//! `SEED0`, `SEP` and `NOISE` override the first seed, color separation and noise.
use std::sync::Arc;
use std::time::Instant;

use dcau_core::synth::{generate, SynthConfig};
use dcau_core::{run_experiment, ExperimentConfig, Strategy};

fn main() {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let mut rare = [0.0; 3];
    let mut miou = [0.0; 3];
    let strategies = [Strategy::Dcau, Strategy::Random, Strategy::Entropy];
    let env = |k: &str| std::env::var(k).ok().and_then(|v| v.parse::<f64>().ok());
    let first = env("SEED0").unwrap_or(0.0) as u64;
    for seed in first..first + seeds {
        let mut sc = SynthConfig::desk_profile(seed);
        if let Some(sep) = env("SEP") {
            sc.color_means = dcau_core::synth::color_means(5, sep);
        }
        if let Some(n) = env("NOISE") {
            sc.noise_sigma = n;
        }
        let ds = Arc::new(generate(&sc).unwrap());
        for (i, s) in strategies.iter().enumerate() {
            let t = Instant::now();
            let cfg = ExperimentConfig { strategy: *s, seed, ..Default::default() };
            let run = run_experiment(Arc::clone(&ds), &cfg).unwrap();
            let r = run.final_report.iou[4].unwrap_or(0.0);
            let m = run.final_report.miou.unwrap();
            rare[i] += r / seeds as f64;
            miou[i] += m / seeds as f64;
            println!("seed {seed} {s:8} rare {r:.4} miou {m:.4} ({:.1}s)", t.elapsed().as_secs_f64());
        }
    }
    for (i, s) in strategies.iter().enumerate() {
        println!("mean {s:8} rare {:.4} miou {:.4}", rare[i], miou[i]);
    }
}
