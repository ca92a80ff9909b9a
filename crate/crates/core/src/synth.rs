//! Seeded generator of class-imbalanced synthetic segmentation datasets.
//!
//! Every image is a Voronoi partition of `region_sites` random sites; each
//! site draws its class from `class_priors`, and pixel colors are the class
//! mean plus Gaussian noise, quantized to 8 bits.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, DatasetError, Sample};
use crate::seeding;
use crate::tensor::{Image, Mask, SampleId};

pub const CHANNELS: usize = 3;

/// Approximate class shares of an eight-class aerial land-cover dataset
/// (bareland, rangeland, developed space, road, tree, water, agriculture,
/// building); strongly imbalanced, for use with [`SynthConfig::with_priors`].
pub const LAND_COVER_PRIORS: [f64; 8] = [0.015, 0.229, 0.161, 0.067, 0.202, 0.033, 0.137, 0.156];

/// Desk profile priors: one rare class at 2%.
pub const DESK_PRIORS: [f64; 5] = [0.40, 0.30, 0.18, 0.10, 0.02];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid priors: {0}")]
    Priors(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_samples: usize,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub class_priors: Vec<f64>,
    pub region_sites: usize,
    pub color_means: Vec<[f64; CHANNELS]>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig::desk_profile(0)
    }
}

impl SynthConfig {
    /// Default separation of class color means.
    pub const DESK_SEPARATION: f64 = 0.10;
    pub const DESK_NOISE: f64 = 0.05;

    /// 600 images of 32x32, five classes with a 2% rare class.
    pub fn desk_profile(seed: u64) -> Self {
        SynthConfig {
            num_samples: 600,
            height: 32,
            width: 32,
            num_classes: DESK_PRIORS.len(),
            class_priors: DESK_PRIORS.to_vec(),
            region_sites: 6,
            color_means: color_means(DESK_PRIORS.len(), Self::DESK_SEPARATION),
            noise_sigma: Self::DESK_NOISE,
            seed,
        }
    }

    /// Replaces the priors (and class count), respacing the color means.
    pub fn with_priors(mut self, priors: Vec<f64>, separation: f64) -> Self {
        self.num_classes = priors.len();
        self.color_means = color_means(priors.len(), separation);
        self.class_priors = priors;
        self
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.num_classes == 0 || self.num_classes > 256 {
            return Err(SynthError::Config(format!(
                "num_classes must be in 1..=256, got {}",
                self.num_classes
            )));
        }
        if self.class_priors.len() != self.num_classes {
            return Err(SynthError::Priors(format!(
                "{} priors for {} classes",
                self.class_priors.len(),
                self.num_classes
            )));
        }
        if self.class_priors.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(SynthError::Priors("priors must be finite and non-negative".into()));
        }
        let sum: f64 = self.class_priors.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(SynthError::Priors(format!("priors sum to {sum}, expected 1")));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(SynthError::Config(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        if self.region_sites == 0 {
            return Err(SynthError::Config("region_sites must be >= 1".into()));
        }
        if self.height == 0 || self.width == 0 {
            return Err(SynthError::Config("image dimensions must be positive".into()));
        }
        if self.color_means.len() != self.num_classes {
            return Err(SynthError::Config(format!(
                "{} color means for {} classes",
                self.color_means.len(),
                self.num_classes
            )));
        }
        if self
            .color_means
            .iter()
            .flatten()
            .any(|v| !(0.0..=1.0).contains(v))
        {
            return Err(SynthError::Config("color means must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Class color means on a circle of radius `separation` around mid-gray in
/// the chromatic plane (orthogonal to the gray axis). Radii up to 0.4 stay
/// inside the unit cube.
pub fn color_means(num_classes: usize, separation: f64) -> Vec<[f64; CHANNELS]> {
    let u = [1.0 / 2f64.sqrt(), -1.0 / 2f64.sqrt(), 0.0];
    let v = [1.0 / 6f64.sqrt(), 1.0 / 6f64.sqrt(), -2.0 / 6f64.sqrt()];
    (0..num_classes)
        .map(|k| {
            let a = std::f64::consts::TAU * k as f64 / num_classes as f64;
            let (s, c) = a.sin_cos();
            let mut m = [0.5; CHANNELS];
            for ch in 0..CHANNELS {
                m[ch] = (0.5 + separation * (c * u[ch] + s * v[ch])).clamp(0.0, 1.0);
            }
            m
        })
        .collect()
}

/// Per-image sub-seed; independent of generation order.
pub fn image_seed(seed: u64, index: u64) -> u64 {
    seeding::derive(seed, seeding::stream::SYNTH_IMAGE, index)
}

pub fn sample_id(index: usize) -> SampleId {
    SampleId::new(format!("img_{index:05}"))
}

/// Voronoi label map for one image; ties go to the lowest site index.
fn draw_labels(cfg: &SynthConfig, classes: &WeightedIndex<f64>, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let sites: Vec<(f64, f64, u8)> = (0..cfg.region_sites)
        .map(|_| {
            let r = rng.random::<f64>() * cfg.height as f64;
            let c = rng.random::<f64>() * cfg.width as f64;
            let class = classes.sample(rng) as u8;
            (r, c, class)
        })
        .collect();
    let mut labels = Vec::with_capacity(cfg.height * cfg.width);
    for row in 0..cfg.height {
        for col in 0..cfg.width {
            let (pr, pc) = (row as f64 + 0.5, col as f64 + 0.5);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (i, (sr, sc, _)) in sites.iter().enumerate() {
                let d = (sr - pr).powi(2) + (sc - pc).powi(2);
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            labels.push(sites[best].2);
        }
    }
    labels
}

fn generate_sample(cfg: &SynthConfig, index: usize, classes: &WeightedIndex<f64>) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(image_seed(cfg.seed, index as u64));
    let labels = draw_labels(cfg, classes, &mut rng);
    let noise = (cfg.noise_sigma > 0.0).then(|| Normal::new(0.0, cfg.noise_sigma).expect("sigma validated"));
    let mut raw = Vec::with_capacity(labels.len() * CHANNELS);
    for &label in &labels {
        let mean = &cfg.color_means[usize::from(label)];
        for m in mean {
            let v = m + noise.as_ref().map_or(0.0, |n| n.sample(&mut rng));
            raw.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    let id = sample_id(index);
    Sample {
        image: Image::from_u8(id.clone(), cfg.height, cfg.width, CHANNELS, &raw).expect("valid image"),
        mask: Mask::new(id, cfg.height, cfg.width, labels).expect("valid mask"),
    }
}

/// Generates the full dataset. Parallel across images; output is identical
/// to serial generation.
pub fn generate(cfg: &SynthConfig) -> Result<Dataset, SynthError> {
    cfg.validate()?;
    let classes = WeightedIndex::new(&cfg.class_priors).map_err(|e| SynthError::Priors(e.to_string()))?;
    let samples: Vec<Sample> = (0..cfg.num_samples)
        .into_par_iter()
        .map(|i| generate_sample(cfg, i, &classes))
        .collect();
    let names = (0..cfg.num_classes).map(|k| format!("class_{k}")).collect();
    let generator = serde_json::to_value(cfg).expect("config serializes");
    Ok(Dataset::new(samples, cfg.num_classes, names)?.with_generator(generator))
}
