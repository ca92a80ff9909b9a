//! Segmentation learner contract and a built-in per-pixel multinomial
//! logistic segmenter trained with mini-batch Adam on unweighted
//! cross-entropy.

use std::io::{self, Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Image, Mask, ProbMap, TensorError};

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("invalid learner config: {0}")]
    Config(String),
    #[error("no labeled samples to fit")]
    EmptyTrainingSet,
    #[error("feature dimension mismatch: model expects {expected}, image {id} gives {actual}")]
    FeatureDimension {
        id: String,
        expected: usize,
        actual: usize,
    },
    #[error("image/mask shape mismatch for {0}")]
    Shape(String),
    #[error("label {label} out of range for {num_classes} classes in {id}")]
    Label {
        id: String,
        label: u8,
        num_classes: usize,
    },
    #[error("non-finite loss {loss} at epoch {epoch} step {step} (lr={learning_rate}, max |w|={max_weight})")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        loss: f64,
        learning_rate: f64,
        max_weight: f64,
    },
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureMode {
    #[serde(rename = "raw")]
    Raw,
    /// Raw channels plus their 3x3 neighborhood mean (zero-padded).
    #[default]
    #[serde(rename = "raw+local_mean3x3")]
    RawLocalMean3x3,
}

impl FeatureMode {
    pub fn feature_dim(self, channels: usize) -> usize {
        match self {
            FeatureMode::Raw => channels,
            FeatureMode::RawLocalMean3x3 => 2 * channels,
        }
    }

    fn code(self) -> u8 {
        match self {
            FeatureMode::Raw => 0,
            FeatureMode::RawLocalMean3x3 => 1,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(FeatureMode::Raw),
            1 => Some(FeatureMode::RawLocalMean3x3),
            _ => None,
        }
    }
}

impl std::str::FromStr for FeatureMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw" => Ok(FeatureMode::Raw),
            "raw+local_mean3x3" => Ok(FeatureMode::RawLocalMean3x3),
            _ => Err(format!("unknown feature mode {s:?} (expected raw|raw+local_mean3x3)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_pixels: usize,
    pub feature_mode: FeatureMode,
    pub seed: u64,
    pub warm_start: bool,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            learning_rate: 0.05,
            epochs: 8,
            batch_pixels: 512,
            feature_mode: FeatureMode::RawLocalMean3x3,
            seed: 0,
            warm_start: false,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<(), LearnerError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(LearnerError::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(LearnerError::Config("epochs must be >= 1".into()));
        }
        if self.batch_pixels == 0 {
            return Err(LearnerError::Config("batch_pixels must be >= 1".into()));
        }
        Ok(())
    }
}

/// Linear coefficients of the per-pixel softmax model. `weights` is
/// `num_classes x feature_dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerState {
    num_classes: usize,
    channels: usize,
    feature_mode: FeatureMode,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub trained_on: usize,
}

impl LearnerState {
    pub fn zeros(num_classes: usize, channels: usize, feature_mode: FeatureMode) -> Self {
        let dim = feature_mode.feature_dim(channels);
        LearnerState {
            num_classes,
            channels,
            feature_mode,
            weights: vec![0.0; num_classes * dim],
            bias: vec![0.0; num_classes],
            trained_on: 0,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn feature_mode(&self) -> FeatureMode {
        self.feature_mode
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_mode.feature_dim(self.channels)
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }

    fn max_abs_weight(&self) -> f64 {
        self.weights
            .iter()
            .chain(&self.bias)
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Per-class softmax probabilities for one feature row, written to `out`.
    fn softmax_into(&self, x: &[f64], out: &mut [f64]) {
        let dim = self.feature_dim();
        let mut max = f64::NEG_INFINITY;
        for k in 0..self.num_classes {
            let row = &self.weights[k * dim..(k + 1) * dim];
            let z = self.bias[k] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            out[k] = z;
            max = max.max(z);
        }
        let mut sum = 0.0;
        for o in out.iter_mut() {
            *o = (*o - max).exp();
            sum += *o;
        }
        for o in out.iter_mut() {
            *o /= sum;
        }
    }
}

/// Per-pixel feature matrix (`num_pixels x feature_dim`, row-major).
pub fn extract_features(img: &Image, mode: FeatureMode) -> Vec<f64> {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let dim = mode.feature_dim(c);
    let mut out = vec![0.0; h * w * dim];
    let data = img.data();
    for r in 0..h {
        for col in 0..w {
            let i = r * w + col;
            let row = &mut out[i * dim..(i + 1) * dim];
            for ch in 0..c {
                row[ch] = f64::from(data[i * c + ch]);
            }
            if mode == FeatureMode::RawLocalMean3x3 {
                for dr in -1i64..=1 {
                    for dc in -1i64..=1 {
                        let (rr, cc) = (r as i64 + dr, col as i64 + dc);
                        if rr < 0 || cc < 0 || rr >= h as i64 || cc >= w as i64 {
                            continue;
                        }
                        let j = rr as usize * w + cc as usize;
                        for ch in 0..c {
                            row[c + ch] += f64::from(data[j * c + ch]);
                        }
                    }
                }
                for v in &mut row[c..] {
                    *v /= 9.0;
                }
            }
        }
    }
    out
}

/// Gradient of the mean cross-entropy with respect to the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Mean cross-entropy over the given pixels and its analytic gradient:
/// `dL/dW_kd = mean_i (p_ik - [y_i = k]) x_id`.
pub fn loss_and_gradient(state: &LearnerState, features: &[f64], labels: &[u8]) -> (f64, Gradient) {
    let dim = state.feature_dim();
    let k = state.num_classes;
    let mut grad = Gradient {
        weights: vec![0.0; k * dim],
        bias: vec![0.0; k],
    };
    let mut probs = vec![0.0; k];
    let mut loss = 0.0;
    for (x, &y) in features.chunks_exact(dim).zip(labels) {
        state.softmax_into(x, &mut probs);
        let y = usize::from(y);
        loss -= probs[y].max(f64::MIN_POSITIVE).ln();
        for c in 0..k {
            let err = probs[c] - if c == y { 1.0 } else { 0.0 };
            grad.bias[c] += err;
            let g = &mut grad.weights[c * dim..(c + 1) * dim];
            for (gd, xd) in g.iter_mut().zip(x) {
                *gd += err * xd;
            }
        }
    }
    let n = labels.len().max(1) as f64;
    grad.weights.iter_mut().for_each(|g| *g /= n);
    grad.bias.iter_mut().for_each(|g| *g /= n);
    (loss / n, grad)
}

/// Mean cross-entropy only.
pub fn mean_loss(state: &LearnerState, features: &[f64], labels: &[u8]) -> f64 {
    let dim = state.feature_dim();
    let mut probs = vec![0.0; state.num_classes];
    let mut loss = 0.0;
    for (x, &y) in features.chunks_exact(dim).zip(labels) {
        state.softmax_into(x, &mut probs);
        loss -= probs[usize::from(y)].max(f64::MIN_POSITIVE).ln();
    }
    loss / labels.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Full-data mean cross-entropy after each epoch.
    pub epoch_losses: Vec<f64>,
    pub pixels: usize,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        let mut idx = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            for (pi, gi) in p.iter_mut().zip(g.iter()) {
                let m = &mut self.m[idx];
                let v = &mut self.v[idx];
                *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * gi;
                *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * gi * gi;
                *pi -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
                idx += 1;
            }
        }
    }
}

/// Trains on the labeled pairs. Starts from `state` when `cfg.warm_start`,
/// otherwise from zeros. Deterministic for a given input order and seed.
pub fn fit(
    state: &LearnerState,
    labeled: &[(&Image, &Mask)],
    cfg: &LearnerConfig,
) -> Result<(LearnerState, FitReport), LearnerError> {
    cfg.validate()?;
    if labeled.is_empty() {
        return Err(LearnerError::EmptyTrainingSet);
    }
    let mut model = if cfg.warm_start && state.feature_mode == cfg.feature_mode {
        state.clone()
    } else {
        LearnerState::zeros(state.num_classes, state.channels, cfg.feature_mode)
    };
    let dim = model.feature_dim();
    let k = model.num_classes;

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (img, mask) in labeled {
        if img.channels() != model.channels {
            return Err(LearnerError::FeatureDimension {
                id: img.id().to_string(),
                expected: dim,
                actual: cfg.feature_mode.feature_dim(img.channels()),
            });
        }
        if img.height() != mask.height() || img.width() != mask.width() {
            return Err(LearnerError::Shape(img.id().to_string()));
        }
        if let Some(&label) = mask.labels().iter().find(|&&l| usize::from(l) >= k) {
            return Err(LearnerError::Label {
                id: img.id().to_string(),
                label,
                num_classes: k,
            });
        }
        features.extend(extract_features(img, cfg.feature_mode));
        labels.extend_from_slice(mask.labels());
    }
    let n = labels.len();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut adam = Adam::new(k * dim + k);
    let mut batch_x = Vec::with_capacity(cfg.batch_pixels * dim);
    let mut batch_y = Vec::with_capacity(cfg.batch_pixels);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (step, chunk) in order.chunks(cfg.batch_pixels).enumerate() {
            batch_x.clear();
            batch_y.clear();
            for &i in chunk {
                batch_x.extend_from_slice(&features[i * dim..(i + 1) * dim]);
                batch_y.push(labels[i]);
            }
            let (loss, grad) = loss_and_gradient(&model, &batch_x, &batch_y);
            if !loss.is_finite() {
                return Err(LearnerError::NonFiniteLoss {
                    epoch,
                    step,
                    loss,
                    learning_rate: cfg.learning_rate,
                    max_weight: model.max_abs_weight(),
                });
            }
            let LearnerState { weights, bias, .. } = &mut model;
            adam.step(
                &mut [weights.as_mut_slice(), bias.as_mut_slice()],
                &[&grad.weights, &grad.bias],
                cfg.learning_rate,
            );
        }
        let loss = mean_loss(&model, &features, &labels);
        if !loss.is_finite() || !model.is_finite() {
            return Err(LearnerError::NonFiniteLoss {
                epoch,
                step: usize::MAX,
                loss,
                learning_rate: cfg.learning_rate,
                max_weight: model.max_abs_weight(),
            });
        }
        epoch_losses.push(loss);
    }
    model.trained_on = labeled.len();
    Ok((model, FitReport { epoch_losses, pixels: n }))
}

/// Softmax class probabilities for every pixel of `img`.
pub fn predict_proba(state: &LearnerState, img: &Image) -> Result<ProbMap, LearnerError> {
    if img.channels() != state.channels {
        return Err(LearnerError::FeatureDimension {
            id: img.id().to_string(),
            expected: state.feature_dim(),
            actual: state.feature_mode.feature_dim(img.channels()),
        });
    }
    let dim = state.feature_dim();
    let k = state.num_classes;
    let features = extract_features(img, state.feature_mode);
    let mut probs = vec![0.0; img.num_pixels() * k];
    for (x, out) in features.chunks_exact(dim).zip(probs.chunks_exact_mut(k)) {
        state.softmax_into(x, out);
    }
    Ok(ProbMap::from_learner_output(
        img.id().clone(),
        img.height(),
        img.width(),
        k,
        probs,
    )?)
}

/// Pluggable learner contract used by the active-learning loop.
pub trait Segmenter {
    fn fit(&mut self, labeled: &[(&Image, &Mask)]) -> Result<FitReport, LearnerError>;
    fn predict_proba(&self, img: &Image) -> Result<ProbMap, LearnerError>;
}

/// The built-in logistic segmenter behind the [`Segmenter`] contract.
#[derive(Debug, Clone)]
pub struct LinearSegmenter {
    pub config: LearnerConfig,
    pub state: LearnerState,
}

impl LinearSegmenter {
    pub fn new(config: LearnerConfig, num_classes: usize, channels: usize) -> Self {
        let state = LearnerState::zeros(num_classes, channels, config.feature_mode);
        LinearSegmenter { config, state }
    }
}

impl Segmenter for LinearSegmenter {
    fn fit(&mut self, labeled: &[(&Image, &Mask)]) -> Result<FitReport, LearnerError> {
        let (state, report) = fit(&self.state, labeled, &self.config)?;
        self.state = state;
        Ok(report)
    }

    fn predict_proba(&self, img: &Image) -> Result<ProbMap, LearnerError> {
        predict_proba(&self.state, img)
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"DCAULRN\0";
const CHECKPOINT_VERSION: u32 = 1;

/// Writes the little-endian checkpoint:
///
/// ```text
/// magic      8 bytes  "DCAULRN\0"
/// version    u32      1
/// classes    u32      K
/// channels   u32      C
/// feat_dim   u32      D
/// mode       u8       0 = raw, 1 = raw+local_mean3x3
/// reserved   3 bytes  zero
/// trained_on u64
/// weights    K*D f64  row-major (class-major)
/// bias       K f64
/// ```
pub fn write_checkpoint<W: Write>(state: &LearnerState, mut out: W) -> Result<(), LearnerError> {
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(state.num_classes as u32).to_le_bytes())?;
    out.write_all(&(state.channels as u32).to_le_bytes())?;
    out.write_all(&(state.feature_dim() as u32).to_le_bytes())?;
    out.write_all(&[state.feature_mode.code(), 0, 0, 0])?;
    out.write_all(&(state.trained_on as u64).to_le_bytes())?;
    for v in state.weights.iter().chain(&state.bias) {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<LearnerState, LearnerError> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(LearnerError::Checkpoint("bad magic".into()));
    }
    let mut u32buf = [0u8; 4];
    let mut read_u32 = |input: &mut R| -> io::Result<u32> {
        input.read_exact(&mut u32buf)?;
        Ok(u32::from_le_bytes(u32buf))
    };
    let version = read_u32(&mut input)?;
    if version != CHECKPOINT_VERSION {
        return Err(LearnerError::Checkpoint(format!("unsupported version {version}")));
    }
    let num_classes = read_u32(&mut input)? as usize;
    let channels = read_u32(&mut input)? as usize;
    let dim = read_u32(&mut input)? as usize;
    let mut mode = [0u8; 4];
    input.read_exact(&mut mode)?;
    let feature_mode = FeatureMode::from_code(mode[0])
        .ok_or_else(|| LearnerError::Checkpoint(format!("unknown feature mode {}", mode[0])))?;
    if feature_mode.feature_dim(channels) != dim {
        return Err(LearnerError::Checkpoint(format!(
            "feature dim {dim} inconsistent with {channels} channels"
        )));
    }
    let mut u64buf = [0u8; 8];
    input.read_exact(&mut u64buf)?;
    let trained_on = u64::from_le_bytes(u64buf) as usize;
    let mut read_f64s = |count: usize| -> io::Result<Vec<f64>> {
        (0..count)
            .map(|_| {
                input.read_exact(&mut u64buf)?;
                Ok(f64::from_le_bytes(u64buf))
            })
            .collect()
    };
    let weights = read_f64s(num_classes * dim)?;
    let bias = read_f64s(num_classes)?;
    Ok(LearnerState {
        num_classes,
        channels,
        feature_mode,
        weights,
        bias,
        trained_on,
    })
}
