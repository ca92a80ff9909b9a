//! Experiment configuration and its flat key-value file form.
//!
//! Config files are TOML with flat keys; every key is optional and falls
//! back to [`ExperimentConfig::default`]:
//!
//! ```toml
//! strategy = "dcau"            # dcau | entropy | random | coreset
//! alpha = 0.5                  # gap exponent (dcau)
//! gamma = 0.5                  # threshold scale (dcau, entropy)
//! eq5_variant = "literal"      # literal | weighted_logsum (dcau)
//! weighting = "gap"            # gap | uniform (dcau)
//! per_cycle_k = 20
//! cycles = 10
//! initial_labeled = 50
//! total_budget = 200           # default: per_cycle_k * cycles
//! train_fraction = 0.7
//! val_fraction = 0.15
//! test_fraction = 0.15
//! seed = 0
//! annotation_mode = "oracle"   # oracle | human
//! learning_rate = 0.05
//! epochs = 8
//! batch_pixels = 512
//! feature_mode = "raw+local_mean3x3"   # raw | raw+local_mean3x3
//! learner_seed = 0
//! warm_start = false
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::{UncertaintyForm, Strategy, DEFAULT_ALPHA, DEFAULT_GAMMA};
use crate::learner::{FeatureMode, LearnerConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationMode {
    #[default]
    Oracle,
    Human,
}

/// Source of the class weights used by the class-aware strategy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Power-law weights from validation IoU gaps.
    #[default]
    Gap,
    /// Uniform `1/K` weights (ablation: removes class feedback).
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSplit {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for EvalSplit {
    fn default() -> Self {
        EvalSplit {
            train: 0.7,
            val: 0.15,
            test: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub strategy: Strategy,
    pub alpha: f64,
    pub gamma: f64,
    pub uncertainty_form: UncertaintyForm,
    pub weighting: Weighting,
    pub per_cycle_k: usize,
    pub cycles: usize,
    pub initial_labeled: usize,
    /// Total annotation budget; `None` means `per_cycle_k * cycles`.
    pub total_budget: Option<usize>,
    pub learner: LearnerConfig,
    pub eval_split: EvalSplit,
    pub seed: u64,
    pub annotation_mode: AnnotationMode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            strategy: Strategy::Dcau,
            alpha: DEFAULT_ALPHA,
            gamma: DEFAULT_GAMMA,
            uncertainty_form: UncertaintyForm::Literal,
            weighting: Weighting::Gap,
            per_cycle_k: 20,
            cycles: 10,
            initial_labeled: 50,
            total_budget: None,
            learner: LearnerConfig::default(),
            eval_split: EvalSplit::default(),
            seed: 0,
            annotation_mode: AnnotationMode::Oracle,
        }
    }
}

impl ExperimentConfig {
    pub fn budget(&self) -> usize {
        self.total_budget
            .unwrap_or(self.per_cycle_k.saturating_mul(self.cycles))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return bad(format!("alpha must be > 0, got {}", self.alpha));
        }
        if !self.gamma.is_finite() {
            return bad(format!("gamma must be finite, got {}", self.gamma));
        }
        if self.per_cycle_k == 0 {
            return bad("per_cycle_k must be >= 1".into());
        }
        let s = self.eval_split;
        if [s.train, s.val, s.test].iter().any(|f| !(0.0..=1.0).contains(f)) {
            return bad("split fractions must lie in [0, 1]".into());
        }
        if (s.train + s.val + s.test - 1.0).abs() > 1e-9 {
            return bad(format!(
                "split fractions sum to {}, expected 1",
                s.train + s.val + s.test
            ));
        }
        self.learner
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Parses a flat TOML config, returning the config and warnings for
    /// keys that the chosen strategy ignores.
    pub fn from_toml_str(text: &str) -> Result<(Self, Vec<String>), ConfigError> {
        let file: ConfigFile = toml::from_str(text)?;
        let (cfg, warnings) = file.into_config();
        cfg.validate()?;
        for w in &warnings {
            log::warn!("{w}");
        }
        Ok((cfg, warnings))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&ConfigFile::from(self)).expect("config serializes")
    }
}

/// On-disk flat form of [`ExperimentConfig`].
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub strategy: Option<Strategy>,
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub eq5_variant: Option<UncertaintyForm>,
    pub weighting: Option<Weighting>,
    pub per_cycle_k: Option<usize>,
    pub cycles: Option<usize>,
    pub initial_labeled: Option<usize>,
    pub total_budget: Option<usize>,
    pub train_fraction: Option<f64>,
    pub val_fraction: Option<f64>,
    pub test_fraction: Option<f64>,
    pub seed: Option<u64>,
    pub annotation_mode: Option<AnnotationMode>,
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_pixels: Option<usize>,
    pub feature_mode: Option<FeatureMode>,
    pub learner_seed: Option<u64>,
    pub warm_start: Option<bool>,
}

impl ConfigFile {
    pub fn into_config(self) -> (ExperimentConfig, Vec<String>) {
        let d = ExperimentConfig::default();
        let strategy = self.strategy.unwrap_or(d.strategy);
        let mut warnings = Vec::new();
        let mut ignored = |key: &str, set: bool, used: bool| {
            if set && !used {
                warnings.push(format!("`{key}` is ignored by strategy {strategy}"));
            }
        };
        let dcau = strategy == Strategy::Dcau;
        ignored("alpha", self.alpha.is_some(), dcau);
        ignored("eq5_variant", self.eq5_variant.is_some(), dcau);
        ignored("weighting", self.weighting.is_some(), dcau);
        ignored("gamma", self.gamma.is_some(), strategy.is_scored());

        let split = EvalSplit {
            train: self.train_fraction.unwrap_or(d.eval_split.train),
            val: self.val_fraction.unwrap_or(d.eval_split.val),
            test: self.test_fraction.unwrap_or(d.eval_split.test),
        };
        let learner = LearnerConfig {
            learning_rate: self.learning_rate.unwrap_or(d.learner.learning_rate),
            epochs: self.epochs.unwrap_or(d.learner.epochs),
            batch_pixels: self.batch_pixels.unwrap_or(d.learner.batch_pixels),
            feature_mode: self.feature_mode.unwrap_or(d.learner.feature_mode),
            seed: self.learner_seed.unwrap_or(d.learner.seed),
            warm_start: self.warm_start.unwrap_or(d.learner.warm_start),
        };
        let cfg = ExperimentConfig {
            strategy,
            alpha: self.alpha.unwrap_or(d.alpha),
            gamma: self.gamma.unwrap_or(d.gamma),
            uncertainty_form: self.eq5_variant.unwrap_or(d.uncertainty_form),
            weighting: self.weighting.unwrap_or(d.weighting),
            per_cycle_k: self.per_cycle_k.unwrap_or(d.per_cycle_k),
            cycles: self.cycles.unwrap_or(d.cycles),
            initial_labeled: self.initial_labeled.unwrap_or(d.initial_labeled),
            total_budget: self.total_budget,
            learner,
            eval_split: split,
            seed: self.seed.unwrap_or(d.seed),
            annotation_mode: self.annotation_mode.unwrap_or(d.annotation_mode),
        };
        (cfg, warnings)
    }
}

impl From<&ExperimentConfig> for ConfigFile {
    fn from(c: &ExperimentConfig) -> Self {
        ConfigFile {
            strategy: Some(c.strategy),
            alpha: Some(c.alpha),
            gamma: Some(c.gamma),
            eq5_variant: Some(c.uncertainty_form),
            weighting: Some(c.weighting),
            per_cycle_k: Some(c.per_cycle_k),
            cycles: Some(c.cycles),
            initial_labeled: Some(c.initial_labeled),
            total_budget: c.total_budget,
            train_fraction: Some(c.eval_split.train),
            val_fraction: Some(c.eval_split.val),
            test_fraction: Some(c.eval_split.test),
            seed: Some(c.seed),
            annotation_mode: Some(c.annotation_mode),
            learning_rate: Some(c.learner.learning_rate),
            epochs: Some(c.learner.epochs),
            batch_pixels: Some(c.learner.batch_pixels),
            feature_mode: Some(c.learner.feature_mode),
            learner_seed: Some(c.learner.seed),
            warm_start: Some(c.learner.warm_start),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        let (cfg, warnings) = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert!(warnings.is_empty());
        assert_eq!(cfg.budget(), 200);
    }

    #[test]
    fn flat_keys_parse() {
        let text = r#"
            strategy = "entropy"
            gamma = 1.0
            per_cycle_k = 7
            learning_rate = 0.01
            feature_mode = "raw"
            eq5_variant = "weighted_logsum"
            annotation_mode = "human"
        "#;
        let (cfg, warnings) = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.strategy, Strategy::Entropy);
        assert_eq!(cfg.gamma, 1.0);
        assert_eq!(cfg.per_cycle_k, 7);
        assert_eq!(cfg.learner.learning_rate, 0.01);
        assert_eq!(cfg.learner.feature_mode, FeatureMode::Raw);
        assert_eq!(cfg.annotation_mode, AnnotationMode::Human);
        assert_eq!(warnings.len(), 1, "{warnings:?}");
        assert!(warnings[0].contains("eq5_variant"));
    }

    #[test]
    fn unused_params_warn() {
        let (_, warnings) = ExperimentConfig::from_toml_str("strategy = \"random\"\nalpha = 2.0\ngamma = 0.1").unwrap();
        assert_eq!(warnings.len(), 2);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(ExperimentConfig::from_toml_str("alpah = 0.5").is_err());
    }

    #[test]
    fn fractions_must_sum_to_one() {
        let err = ExperimentConfig::from_toml_str("train_fraction = 0.9").unwrap_err();
        assert!(err.to_string().contains("sum"));
    }

    #[test]
    fn zero_learning_rate_rejected() {
        assert!(ExperimentConfig::from_toml_str("learning_rate = 0.0").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ExperimentConfig {
            strategy: Strategy::Coreset,
            total_budget: Some(33),
            seed: 12,
            ..Default::default()
        };
        let (back, _) = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }
}
