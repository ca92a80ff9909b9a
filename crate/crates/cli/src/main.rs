use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use dcau_core::experiment::{run_experiment, run_fully_supervised, run_sweep, SweepAxis};
use dcau_core::report::{emit_comparison, emit_cycle_csv};
use dcau_core::synth::{color_means, generate, SynthConfig};
use dcau_core::{load_dataset, write_dataset, ExperimentConfig, Strategy};
use dcau_service::Service;

#[derive(Parser)]
#[command(name = "dcau", version, about = "Class-aware active learning for segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 600)]
        num_samples: usize,
        #[arg(long, default_value_t = 32)]
        height: usize,
        #[arg(long, default_value_t = 32)]
        width: usize,
        /// Comma-separated class priors (default: the five-class desk profile).
        #[arg(long, value_delimiter = ',')]
        priors: Option<Vec<f64>>,
        #[arg(long)]
        separation: Option<f64>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        sites: Option<usize>,
    },
    /// Run oracle-mode experiments and write per-cycle CSVs plus a comparison JSON.
    Run {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Strategies to run (default: the config's strategy).
        #[arg(long, value_delimiter = ',')]
        strategies: Option<Vec<Strategy>>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also train on the whole training pool and report it as the upper bound.
        #[arg(long)]
        upper_bound: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// One run per value of a parameter.
    Sweep {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// per_cycle_k | learning_rate | alpha | gamma
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the human-in-the-loop annotation API.
    Serve {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        state: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
        /// Static console assets served under `/`.
        #[arg(long)]
        assets: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    let Some(path) = path else {
        return Ok(ExperimentConfig::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let (cfg, warnings) =
        ExperimentConfig::from_toml_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    for w in warnings {
        log::warn!("{w}");
    }
    Ok(cfg)
}

fn open_dataset(path: &Path) -> Result<Arc<dcau_core::Dataset>> {
    let ds = load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))?;
    log::info!("loaded {} samples, {} classes", ds.len(), ds.num_classes());
    Ok(Arc::new(ds))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Synth {
            out,
            seed,
            num_samples,
            height,
            width,
            priors,
            separation,
            noise,
            sites,
        } => {
            let mut cfg = SynthConfig {
                num_samples,
                height,
                width,
                ..SynthConfig::desk_profile(seed)
            };
            let sep = separation.unwrap_or(SynthConfig::DESK_SEPARATION);
            match priors {
                Some(p) => cfg = cfg.with_priors(p, sep),
                None => cfg.color_means = color_means(cfg.num_classes, sep),
            }
            if let Some(n) = noise {
                cfg.noise_sigma = n;
            }
            if let Some(s) = sites {
                cfg.region_sites = s;
            }
            let ds = generate(&cfg)?;
            write_dataset(&ds, &out)?;
            log::info!("wrote {} samples to {}", ds.len(), out.display());
        }
        Command::Run {
            dataset,
            config,
            strategies,
            seed,
            upper_bound,
            out,
        } => {
            let ds = open_dataset(&dataset)?;
            let mut base = load_config(config.as_deref())?;
            if let Some(s) = seed {
                base.seed = s;
            }
            let strategies = strategies.unwrap_or_else(|| vec![base.strategy]);
            fs::create_dir_all(&out)?;
            let mut runs = BTreeMap::new();
            for strategy in strategies {
                let cfg = ExperimentConfig { strategy, ..base.clone() };
                let run = run_experiment(Arc::clone(&ds), &cfg)?;
                emit_cycle_csv(&run.records, &out.join(format!("cycles_{strategy}.csv")))?;
                println!(
                    "{strategy:8} final mIoU {:.4}  labeled {}  {:.1}s",
                    run.final_report.miou.unwrap_or(f64::NAN),
                    run.final_labeled,
                    run.wall_time
                );
                runs.insert(strategy, run);
            }
            let upper = if upper_bound {
                let r = run_fully_supervised(Arc::clone(&ds), &base)?;
                println!("{:8} final mIoU {:.4}", "full", r.miou.unwrap_or(f64::NAN));
                Some(r)
            } else {
                None
            };
            emit_comparison(&runs, upper.as_ref(), &out.join("comparison.json"))?;
        }
        Command::Sweep {
            dataset,
            config,
            axis,
            values,
            out,
        } => {
            let ds = open_dataset(&dataset)?;
            let base = load_config(config.as_deref())?;
            let report = run_sweep(ds, &base, axis, &values)?;
            println!("{:>14} {:>10} {:>8}", axis.name(), "final_miou", "labeled");
            for row in &report.rows {
                println!(
                    "{:>14} {:>10.4} {:>8}",
                    row.value,
                    row.final_miou.unwrap_or(f64::NAN),
                    row.final_labeled
                );
            }
            fs::write(&out, serde_json::to_string_pretty(&report)? + "\n")
                .with_context(|| format!("writing {}", out.display()))?;
        }
        Command::Serve {
            dataset,
            config,
            state,
            port,
            bind,
            assets,
        } => {
            let ds = open_dataset(&dataset)?;
            let cfg = load_config(config.as_deref())?;
            if let Some(dir) = &assets {
                if !dir.is_dir() {
                    bail!("assets directory {} does not exist", dir.display());
                }
            }
            let service = Service::open(ds, cfg, &state)?;
            let router = service.router(assets.as_deref());
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind((bind.as_str(), port)).await?;
                log::info!("listening on http://{}", listener.local_addr()?);
                dcau_service::serve(listener, router).await
            })?;
            service.shutdown();
        }
    }
    Ok(())
}
