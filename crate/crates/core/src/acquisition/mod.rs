//! Acquisition: class-aware uncertainty scoring, adaptive thresholding,
//! top-K selection and the baseline strategies it is compared against.
//!
//! The class-aware score of an image is built in four steps:
//!
//! 1. per-class gaps `1 - IoU_c` from the validation report are turned into
//!    weights `w_c = gap_c^alpha / sum_j gap_j^alpha` ([`dynamic_weights`]);
//! 2. each pixel gets its entropy `H(p) = -sum_k p_k ln p_k` ([`pixel_entropy`]);
//! 3. the entropy is reweighted as `sum_k p_k w_k H(p)`
//!    ([`dynamic_pixel_uncertainty`]);
//! 4. the image score is the mean over pixels ([`dcau_score`]).
//!
//! Scores over the unlabeled pool are thresholded at `mean + gamma * std`
//! ([`adaptive_threshold`]) and the top `k` are taken ([`select`]).

mod baselines;
mod score;
mod selection;
mod weights;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use baselines::{baseline_coreset_select, baseline_entropy_score, baseline_random_select};
pub use score::{
    dcau_score, dynamic_pixel_uncertainty, pixel_entropy, weighted_logsum_uncertainty, DcauScore,
    UncertaintyForm,
};
pub use selection::{adaptive_threshold, select, SelectionResult, ThresholdStats};
pub use weights::{dynamic_weights, WeightVector};

/// Default exponent on class gaps.
pub const DEFAULT_ALPHA: f64 = 0.5;
/// Default threshold scale on the pool score standard deviation.
pub const DEFAULT_GAMMA: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum AcquisitionError {
    #[error("alpha must be a finite positive number, got {0}")]
    InvalidAlpha(f64),
    #[error("gamma must be finite, got {0}")]
    InvalidGamma(f64),
    #[error("no class has a defined IoU; cannot derive weights")]
    NoDefinedClasses,
    #[error("empty pool")]
    EmptyPool,
    #[error("weight vector has {weights} classes, probability map has {map}")]
    ClassMismatch { weights: usize, map: usize },
    #[error("feature vectors have inconsistent dimensions")]
    FeatureDimension,
}

/// Sample selection strategy for one active-learning run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Class-aware weighted entropy with adaptive threshold.
    Dcau,
    /// Plain mean pixel entropy.
    Entropy,
    /// Uniform random sampling.
    Random,
    /// Greedy k-center over image-level mean class probabilities.
    Coreset,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Dcau,
        Strategy::Entropy,
        Strategy::Random,
        Strategy::Coreset,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Dcau => "dcau",
            Strategy::Entropy => "entropy",
            Strategy::Random => "random",
            Strategy::Coreset => "coreset",
        }
    }

    /// Whether the strategy ranks samples by a scalar score (and so reports
    /// threshold statistics).
    pub fn is_scored(self) -> bool {
        matches!(self, Strategy::Dcau | Strategy::Entropy)
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown strategy {s:?} (expected dcau|entropy|random|coreset)"))
    }
}
