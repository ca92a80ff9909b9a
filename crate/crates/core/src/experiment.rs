//! The active-learning loop: fit, evaluate, weight, score, threshold,
//! select, annotate, record.
//!
//! [`Session`] is re-entrant. In oracle mode a cycle runs start to finish in
//! [`Session::begin_cycle`]; in human mode the selected ids are parked as
//! pending and the cycle completes once every one of them has been committed
//! through [`Session::submit_label`]. All state round-trips through a
//! checkpoint directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::{
    adaptive_threshold, baseline_coreset_select, baseline_entropy_score, baseline_random_select,
    dcau_score, dynamic_weights, pixel_entropy, select, AcquisitionError, DcauScore, Strategy,
    ThresholdStats, WeightVector,
};
use crate::config::{AnnotationMode, ConfigError, ExperimentConfig, Weighting};
use crate::dataset::{decode_mask_png, encode_mask_png, Dataset, DatasetError};
use crate::learner::{self, LearnerConfig, LearnerError, LearnerState};
use crate::metrics::{ClassIouReport, ConfusionCounts, MetricsError};
use crate::pool::{PoolError, PoolState};
use crate::seeding::{self, stream};
use crate::tensor::{Image, Mask, ProbMap, SampleId, TensorError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Acquisition(#[from] AcquisitionError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("dataset too small: {0}")]
    TooSmall(String),
    #[error("cannot advance: {0} samples still pending")]
    PendingLabels(usize),
    #[error("unknown sample id {0}")]
    UnknownSample(SampleId),
    #[error("invalid mask for {id}: {reason}")]
    InvalidMask { id: SampleId, reason: String },
    #[error("operation requires {0:?} annotation mode")]
    Mode(AnnotationMode),
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error("sweep: {0}")]
    Sweep(String),
}

impl From<TensorError> for ExperimentError {
    fn from(e: TensorError) -> Self {
        ExperimentError::Dataset(DatasetError::Tensor(e))
    }
}

/// Disjoint train-pool / validation / test id lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<SampleId>,
    pub val: Vec<SampleId>,
    pub test: Vec<SampleId>,
}

impl Splits {
    /// Seeded shuffle of the sorted ids; validation and test sizes are the
    /// rounded fractions, the remainder is the training pool.
    pub fn new(ds: &Dataset, cfg: &ExperimentConfig) -> Self {
        let mut ids: Vec<SampleId> = ds.ids().cloned().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seeding::derive(cfg.seed, stream::SPLIT, 0));
        ids.shuffle(&mut rng);
        let n = ids.len();
        let n_val = ((cfg.eval_split.val * n as f64).round() as usize).min(n);
        let n_test = ((cfg.eval_split.test * n as f64).round() as usize).min(n - n_val);
        let mut val: Vec<SampleId> = ids.drain(..n_val).collect();
        let mut test: Vec<SampleId> = ids.drain(..n_test).collect();
        ids.sort();
        val.sort();
        test.sort();
        Splits {
            train: ids,
            val,
            test,
        }
    }
}

/// One row of the per-cycle progression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: usize,
    /// Test-split mIoU of the model fitted at the start of this cycle.
    pub miou: Option<f64>,
    /// Test-split per-class IoU.
    pub iou: Vec<Option<f64>>,
    /// Validation-split per-class IoU that drove the class weights.
    pub val_iou: Vec<Option<f64>>,
    pub weights: Option<Vec<Option<f64>>>,
    pub theta: Option<ThresholdStats>,
    pub candidate_count: Option<usize>,
    pub selected_ids: Vec<SampleId>,
    pub filled_below_threshold: usize,
    pub labeled_before: usize,
    pub wall_time: f64,
}

impl CycleRecord {
    /// Equality on everything except wall-clock time.
    pub fn same_outcome(&self, other: &CycleRecord) -> bool {
        let mut a = self.clone();
        a.wall_time = other.wall_time;
        &a == other
    }
}

/// Everything computed for a cycle before any sample is selected.
#[derive(Debug, Clone)]
pub struct CyclePlan {
    pub cycle: usize,
    pub learner: LearnerState,
    pub val_report: ClassIouReport,
    pub test_report: ClassIouReport,
    pub weights: Option<WeightVector>,
    /// Unlabeled-pool scores for scored strategies, ordered by id.
    pub scores: Option<Vec<DcauScore>>,
    pub capacity: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CycleOutcome {
    /// Oracle mode: the cycle ran to completion.
    Completed(CycleRecord),
    /// Human mode: these ids await labels.
    AwaitingLabels(Vec<SampleId>),
    /// Nothing left to acquire (pool empty, budget spent or cycles done).
    Finished,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SubmitOutcome {
    Accepted { remaining: usize },
    CycleCompleted { cycle: usize },
}

/// Human-mode cycle waiting on labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenCycle {
    pub record: CycleRecord,
    pub scores: BTreeMap<SampleId, f64>,
}

/// Result of a complete oracle run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRun {
    pub strategy: Strategy,
    pub records: Vec<CycleRecord>,
    /// Test-split report of a model fitted on the final labeled set.
    pub final_report: ClassIouReport,
    pub final_labeled: usize,
    pub wall_time: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct SessionFile {
    config: ExperimentConfig,
    splits: Splits,
    records: Vec<CycleRecord>,
    open_cycle: Option<OpenCycle>,
}

pub const POOL_FILE: &str = "pool.json";
pub const LEARNER_FILE: &str = "learner.bin";
pub const SESSION_FILE: &str = "session.json";
pub const ANNOTATIONS_DIR: &str = "annotations";

pub struct Session {
    dataset: Arc<Dataset>,
    config: ExperimentConfig,
    splits: Splits,
    pool: PoolState,
    learner: LearnerState,
    records: Vec<CycleRecord>,
    annotations: BTreeMap<SampleId, Mask>,
    open_cycle: Option<OpenCycle>,
}

impl Session {
    pub fn new(dataset: Arc<Dataset>, config: ExperimentConfig) -> Result<Self, ExperimentError> {
        config.validate()?;
        let Some(first) = dataset.samples().first() else {
            return Err(ExperimentError::TooSmall("dataset is empty".into()));
        };
        let channels = first.image.channels();
        let splits = Splits::new(&dataset, &config);
        if splits.val.is_empty() {
            return Err(ExperimentError::TooSmall("validation split is empty".into()));
        }
        if config.initial_labeled == 0 {
            return Err(ExperimentError::TooSmall("initial_labeled must be >= 1".into()));
        }
        let pool = PoolState::init(
            splits.train.iter().cloned(),
            config.initial_labeled,
            config.per_cycle_k,
            config.budget(),
            seeding::derive(config.seed, stream::POOL, 0),
        )?;
        let learner = LearnerState::zeros(dataset.num_classes(), channels, config.learner.feature_mode);
        Ok(Session {
            dataset,
            config,
            splits,
            pool,
            learner,
            records: Vec::new(),
            annotations: BTreeMap::new(),
            open_cycle: None,
        })
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.dataset
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    pub fn pool(&self) -> &PoolState {
        &self.pool
    }

    pub fn learner(&self) -> &LearnerState {
        &self.learner
    }

    pub fn records(&self) -> &[CycleRecord] {
        &self.records
    }

    pub fn open_cycle(&self) -> Option<&OpenCycle> {
        self.open_cycle.as_ref()
    }

    pub fn annotation(&self, id: &SampleId) -> Option<&Mask> {
        self.annotations.get(id)
    }

    /// True when no further cycle will run.
    pub fn is_finished(&self) -> bool {
        self.open_cycle.is_none()
            && (self.records.len() >= self.config.cycles || self.pool.is_exhausted())
    }

    fn image(&self, id: &SampleId) -> Result<&Image, ExperimentError> {
        self.dataset
            .get(id)
            .map(|s| &s.image)
            .ok_or_else(|| ExperimentError::UnknownSample(id.clone()))
    }

    /// Training mask: a committed annotation if one exists, else ground truth.
    fn training_mask(&self, id: &SampleId) -> Result<&Mask, ExperimentError> {
        if let Some(m) = self.annotations.get(id) {
            return Ok(m);
        }
        self.dataset
            .get(id)
            .map(|s| &s.mask)
            .ok_or_else(|| ExperimentError::UnknownSample(id.clone()))
    }

    fn learner_config(&self, cycle: usize) -> LearnerConfig {
        LearnerConfig {
            seed: seeding::derive(self.config.seed ^ self.config.learner.seed, stream::LEARNER, cycle as u64),
            ..self.config.learner.clone()
        }
    }

    /// Fits a fresh (or warm-started) learner on the current labeled set.
    pub fn fit_labeled(&self, cycle: usize) -> Result<LearnerState, ExperimentError> {
        let mut pairs = Vec::with_capacity(self.pool.labeled_ids.len());
        for id in &self.pool.labeled_ids {
            pairs.push((self.image(id)?, self.training_mask(id)?));
        }
        let (state, report) = learner::fit(&self.learner, &pairs, &self.learner_config(cycle))?;
        log::debug!(
            "cycle {cycle}: fit on {} images, final loss {:?}",
            pairs.len(),
            report.epoch_losses.last()
        );
        Ok(state)
    }

    /// Per-class IoU of `state` on the given ids against ground truth.
    pub fn evaluate(
        &self,
        state: &LearnerState,
        ids: &[SampleId],
        cycle: usize,
    ) -> Result<ClassIouReport, ExperimentError> {
        let k = self.dataset.num_classes();
        let parts: Vec<ConfusionCounts> = ids
            .par_iter()
            .map(|id| -> Result<ConfusionCounts, ExperimentError> {
                let sample = self.dataset.get(id).ok_or_else(|| ExperimentError::UnknownSample(id.clone()))?;
                let pred = learner::predict_proba(state, &sample.image)?.argmax();
                let mut c = ConfusionCounts::new(k);
                c.accumulate(&pred, &sample.mask)?;
                Ok(c)
            })
            .collect::<Result<_, _>>()?;
        let mut total = ConfusionCounts::new(k);
        for p in &parts {
            total.merge(p)?;
        }
        Ok(total.report(cycle))
    }

    fn predict_many(
        &self,
        state: &LearnerState,
        ids: &[SampleId],
    ) -> Result<Vec<ProbMap>, ExperimentError> {
        ids.par_iter()
            .map(|id| Ok(learner::predict_proba(state, self.image(id)?)?))
            .collect()
    }

    fn class_weights(&self, report: &ClassIouReport) -> Result<WeightVector, ExperimentError> {
        match self.config.weighting {
            Weighting::Gap => Ok(dynamic_weights(report, self.config.alpha)?),
            Weighting::Uniform => Ok(WeightVector::uniform(report.num_classes(), report.cycle)),
        }
    }

    /// Fits, evaluates and scores the unlabeled pool for the next cycle
    /// without changing any state.
    pub fn plan_cycle(&self) -> Result<CyclePlan, ExperimentError> {
        let cycle = self.pool.cycle + 1;
        let learner = self.fit_labeled(cycle)?;
        let val_report = self.evaluate(&learner, &self.splits.val, cycle)?;
        let test_report = self.evaluate(&learner, &self.splits.test, cycle)?;
        let unlabeled: Vec<SampleId> = self.pool.unlabeled_ids.iter().cloned().collect();

        let (weights, scores) = match self.config.strategy {
            Strategy::Dcau => {
                let w = self.class_weights(&val_report)?;
                let variant = self.config.uncertainty_form;
                let scores = unlabeled
                    .par_iter()
                    .map(|id| {
                        let pm = learner::predict_proba(&learner, self.image(id)?)?;
                        Ok(dcau_score(&pm, &w, variant, false)?)
                    })
                    .collect::<Result<Vec<_>, ExperimentError>>()?;
                (Some(w), Some(scores))
            }
            Strategy::Entropy => {
                let scores = unlabeled
                    .par_iter()
                    .map(|id| {
                        let pm = learner::predict_proba(&learner, self.image(id)?)?;
                        Ok(DcauScore::scalar(id.clone(), baseline_entropy_score(&pm), pm.num_pixels()))
                    })
                    .collect::<Result<Vec<_>, ExperimentError>>()?;
                (None, Some(scores))
            }
            Strategy::Random | Strategy::Coreset => (None, None),
        };
        Ok(CyclePlan {
            cycle,
            learner,
            val_report,
            test_report,
            weights,
            scores,
            capacity: self.pool.next_cycle_capacity(),
        })
    }

    fn choose(
        &self,
        plan: &CyclePlan,
    ) -> Result<(Vec<SampleId>, Option<ThresholdStats>, Option<usize>, usize), ExperimentError> {
        let k = plan.capacity;
        match self.config.strategy {
            Strategy::Dcau | Strategy::Entropy => {
                let scores = plan.scores.as_deref().unwrap_or_default();
                let stats = adaptive_threshold(scores, self.config.gamma)?;
                let sel = select(scores, &stats, k);
                Ok((sel.selected_ids, Some(stats), Some(sel.candidate_ids.len()), sel.filled_below_threshold))
            }
            Strategy::Random => {
                let pool: Vec<SampleId> = self.pool.unlabeled_ids.iter().cloned().collect();
                let seed = seeding::derive(self.config.seed, stream::RANDOM_SELECT, plan.cycle as u64);
                Ok((baseline_random_select(&pool, k, seed), None, None, 0))
            }
            Strategy::Coreset => {
                let ids: Vec<SampleId> = self
                    .pool
                    .labeled_ids
                    .iter()
                    .chain(&self.pool.unlabeled_ids)
                    .cloned()
                    .collect();
                let maps = self.predict_many(&plan.learner, &ids)?;
                let features: Vec<(SampleId, Vec<f64>)> = ids
                    .into_iter()
                    .zip(maps.iter().map(ProbMap::mean_class_probs))
                    .collect();
                let picked = baseline_coreset_select(&features, &self.pool.labeled_ids, k)?;
                Ok((picked, None, None, 0))
            }
        }
    }

    /// Runs the next cycle up to annotation. Oracle mode commits ground truth
    /// and completes the cycle; human mode parks the selection as pending.
    pub fn begin_cycle(&mut self) -> Result<CycleOutcome, ExperimentError> {
        if !self.pool.pending.is_empty() {
            return Err(ExperimentError::PendingLabels(self.pool.pending.len()));
        }
        if self.is_finished() {
            return Ok(CycleOutcome::Finished);
        }
        let started = Instant::now();
        let plan = self.plan_cycle()?;
        let (selected, theta, candidate_count, filled) = self.choose(&plan)?;

        let record = CycleRecord {
            cycle: plan.cycle,
            miou: plan.test_report.miou,
            iou: plan.test_report.iou.clone(),
            val_iou: plan.val_report.iou.clone(),
            weights: plan.weights.as_ref().map(|w| w.weights.clone()),
            theta,
            candidate_count,
            selected_ids: selected.clone(),
            filled_below_threshold: filled,
            labeled_before: self.pool.labeled_ids.len(),
            wall_time: 0.0,
        };
        let scores: BTreeMap<SampleId, f64> = plan
            .scores
            .iter()
            .flatten()
            .map(|s| (s.sample_id.clone(), s.score))
            .collect();
        self.learner = plan.learner;

        match self.config.annotation_mode {
            AnnotationMode::Oracle => {
                let masks: Vec<Mask> = selected
                    .iter()
                    .map(|id| self.training_mask(id).cloned())
                    .collect::<Result<_, _>>()?;
                self.pool.commit_labels(&selected, &masks)?;
                self.pool.check_invariants()?;
                let record = CycleRecord {
                    wall_time: started.elapsed().as_secs_f64(),
                    ..record
                };
                self.records.push(record.clone());
                Ok(CycleOutcome::Completed(record))
            }
            AnnotationMode::Human => {
                self.pool.mark_pending(&selected)?;
                self.pool.check_invariants()?;
                self.open_cycle = Some(OpenCycle {
                    record: CycleRecord {
                        wall_time: started.elapsed().as_secs_f64(),
                        ..record
                    },
                    scores,
                });
                if selected.is_empty() {
                    self.close_cycle();
                }
                Ok(CycleOutcome::AwaitingLabels(selected))
            }
        }
    }

    fn close_cycle(&mut self) {
        if let Some(open) = self.open_cycle.take() {
            self.records.push(open.record);
        }
    }

    /// Checks a submitted mask against the sample's image and class count.
    pub fn validate_mask(&self, mask: &Mask) -> Result<(), ExperimentError> {
        let id = mask.id();
        let image = self.image(id)?;
        if mask.height() != image.height() || mask.width() != image.width() {
            return Err(ExperimentError::InvalidMask {
                id: id.clone(),
                reason: format!(
                    "mask is {}x{}, image is {}x{}",
                    mask.height(),
                    mask.width(),
                    image.height(),
                    image.width()
                ),
            });
        }
        mask.validate_classes(self.dataset.num_classes())
            .map_err(|e| ExperimentError::InvalidMask {
                id: id.clone(),
                reason: e.to_string(),
            })
    }

    /// Commits one human label. Completes the open cycle when the last
    /// pending id is labeled.
    pub fn submit_label(&mut self, mask: Mask) -> Result<SubmitOutcome, ExperimentError> {
        if self.config.annotation_mode != AnnotationMode::Human {
            return Err(ExperimentError::Mode(AnnotationMode::Human));
        }
        self.validate_mask(&mask)?;
        let id = mask.id().clone();
        if !self.pool.pending.contains(&id) {
            return Err(if self.pool.labeled_ids.contains(&id) {
                PoolError::DoubleLabeling(id).into()
            } else {
                PoolError::NotPending(id).into()
            });
        }
        let advanced = self.pool.commit_labels(std::slice::from_ref(&id), std::slice::from_ref(&mask))?;
        self.annotations.insert(id, mask);
        self.pool.check_invariants()?;
        if advanced {
            self.close_cycle();
            Ok(SubmitOutcome::CycleCompleted {
                cycle: self.pool.cycle,
            })
        } else {
            Ok(SubmitOutcome::Accepted {
                remaining: self.pool.pending.len(),
            })
        }
    }

    /// Runs oracle cycles until finished.
    pub fn run_to_completion(&mut self) -> Result<(), ExperimentError> {
        if self.config.annotation_mode != AnnotationMode::Oracle {
            return Err(ExperimentError::Mode(AnnotationMode::Oracle));
        }
        while let CycleOutcome::Completed(_) = self.begin_cycle()? {}
        Ok(())
    }

    /// Test-split report of a model fitted on the current labeled set.
    pub fn final_report(&self) -> Result<ClassIouReport, ExperimentError> {
        let cycle = self.pool.cycle + 1;
        let state = self.fit_labeled(cycle)?;
        self.evaluate(&state, &self.splits.test, cycle)
    }

    /// Argmax prediction of the current model.
    pub fn prediction(&self, id: &SampleId) -> Result<Mask, ExperimentError> {
        Ok(learner::predict_proba(&self.learner, self.image(id)?)?.argmax())
    }

    /// Weights of the open cycle, else of the last completed one.
    pub fn current_weights(&self) -> Option<WeightVector> {
        let weights = self
            .open_cycle
            .as_ref()
            .map(|o| &o.record)
            .or_else(|| self.records.last())
            .and_then(|r| r.weights.clone())?;
        Some(WeightVector {
            weights,
            alpha: self.config.alpha,
            cycle: self.pool.cycle,
        })
    }

    /// Per-pixel uncertainty of one sample under the current model.
    pub fn uncertainty_map(&self, id: &SampleId) -> Result<Vec<f64>, ExperimentError> {
        pixel_uncertainty(
            &self.learner,
            self.image(id)?,
            self.config.strategy,
            self.current_weights().as_ref(),
            self.config.uncertainty_form,
        )
    }

    pub fn save_checkpoint(&self, dir: &Path) -> Result<(), ExperimentError> {
        let ck = |path: &Path, reason: String| ExperimentError::Checkpoint {
            path: path.to_path_buf(),
            reason,
        };
        let ann = dir.join(ANNOTATIONS_DIR);
        fs::create_dir_all(&ann).map_err(|e| ck(&ann, e.to_string()))?;
        for (id, mask) in &self.annotations {
            let p = ann.join(format!("{id}.png"));
            if !p.exists() {
                write_atomic(&p, &encode_mask_png(mask)?).map_err(|e| ck(&p, e.to_string()))?;
            }
        }
        let mut learner_bytes = Vec::new();
        learner::write_checkpoint(&self.learner, &mut learner_bytes)?;
        let p = dir.join(LEARNER_FILE);
        write_atomic(&p, &learner_bytes).map_err(|e| ck(&p, e.to_string()))?;

        let session = SessionFile {
            config: self.config.clone(),
            splits: self.splits.clone(),
            records: self.records.clone(),
            open_cycle: self.open_cycle.clone(),
        };
        let p = dir.join(SESSION_FILE);
        let text = serde_json::to_string_pretty(&session).map_err(|e| ck(&p, e.to_string()))?;
        write_atomic(&p, text.as_bytes()).map_err(|e| ck(&p, e.to_string()))?;
        // Pool last: it is the commit point for a checkpoint.
        let p = dir.join(POOL_FILE);
        write_atomic(&p, self.pool.to_json().as_bytes()).map_err(|e| ck(&p, e.to_string()))?;
        Ok(())
    }

    pub fn has_checkpoint(dir: &Path) -> bool {
        dir.join(POOL_FILE).is_file() && dir.join(SESSION_FILE).is_file()
    }

    pub fn load_checkpoint(dataset: Arc<Dataset>, dir: &Path) -> Result<Self, ExperimentError> {
        let ck = |path: &Path, reason: String| ExperimentError::Checkpoint {
            path: path.to_path_buf(),
            reason,
        };
        let read = |p: &Path| fs::read(p).map_err(|e| ck(p, e.to_string()));

        let p = dir.join(POOL_FILE);
        let pool = PoolState::from_json(&String::from_utf8_lossy(&read(&p)?)).map_err(|e| ck(&p, e.to_string()))?;
        let p = dir.join(SESSION_FILE);
        let session: SessionFile = serde_json::from_slice(&read(&p)?).map_err(|e| ck(&p, e.to_string()))?;
        let p = dir.join(LEARNER_FILE);
        let learner = learner::read_checkpoint(read(&p)?.as_slice())?;

        let mut annotations = BTreeMap::new();
        for id in &pool.labeled_ids {
            let p = dir.join(ANNOTATIONS_DIR).join(format!("{id}.png"));
            if p.is_file() {
                annotations.insert(id.clone(), decode_mask_png(id.clone(), &read(&p)?)?);
            }
        }
        pool.check_invariants()?;
        let known: BTreeSet<&SampleId> = dataset.ids().collect();
        if let Some(id) = pool
            .labeled_ids
            .iter()
            .chain(&pool.unlabeled_ids)
            .chain(&pool.pending)
            .find(|id| !known.contains(id))
        {
            return Err(ck(dir, format!("sample {id} not in dataset")));
        }
        Ok(Session {
            dataset,
            config: session.config,
            splits: session.splits,
            pool,
            learner,
            records: session.records,
            annotations,
            open_cycle: session.open_cycle,
        })
    }
}

/// Per-pixel uncertainty map: the class-weighted value for the class-aware
/// strategy once weights exist, plain entropy otherwise.
pub fn pixel_uncertainty(
    state: &LearnerState,
    image: &Image,
    strategy: Strategy,
    weights: Option<&WeightVector>,
    form: crate::acquisition::UncertaintyForm,
) -> Result<Vec<f64>, ExperimentError> {
    let pm = learner::predict_proba(state, image)?;
    match (strategy, weights) {
        (Strategy::Dcau, Some(w)) => Ok(dcau_score(&pm, w, form, true)?.pixel_dyn.unwrap_or_default()),
        _ => Ok(pm.rows().map(pixel_entropy).collect()),
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)
}

/// Full oracle run: `cycles` acquisition rounds plus a final evaluation.
pub fn run_experiment(ds: Arc<Dataset>, cfg: &ExperimentConfig) -> Result<ExperimentRun, ExperimentError> {
    let started = Instant::now();
    let cfg = ExperimentConfig {
        annotation_mode: AnnotationMode::Oracle,
        ..cfg.clone()
    };
    let mut session = Session::new(ds, cfg)?;
    session.run_to_completion()?;
    let final_report = session.final_report()?;
    Ok(ExperimentRun {
        strategy: session.config.strategy,
        records: session.records.clone(),
        final_report,
        final_labeled: session.pool.labeled_ids.len(),
        wall_time: started.elapsed().as_secs_f64(),
    })
}

/// Test-split report of a model trained on the entire training pool.
pub fn run_fully_supervised(ds: Arc<Dataset>, cfg: &ExperimentConfig) -> Result<ClassIouReport, ExperimentError> {
    let splits = Splits::new(&ds, cfg);
    let cfg = ExperimentConfig {
        initial_labeled: splits.train.len(),
        annotation_mode: AnnotationMode::Oracle,
        ..cfg.clone()
    };
    Session::new(ds, cfg)?.final_report()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    PerCycleK,
    LearningRate,
    Alpha,
    Gamma,
}

impl std::str::FromStr for SweepAxis {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per_cycle_k" => Ok(SweepAxis::PerCycleK),
            "learning_rate" => Ok(SweepAxis::LearningRate),
            "alpha" => Ok(SweepAxis::Alpha),
            "gamma" => Ok(SweepAxis::Gamma),
            other => Err(ExperimentError::Sweep(format!(
                "invalid axis {other:?} (expected per_cycle_k|learning_rate|alpha|gamma)"
            ))),
        }
    }
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::PerCycleK => "per_cycle_k",
            SweepAxis::LearningRate => "learning_rate",
            SweepAxis::Alpha => "alpha",
            SweepAxis::Gamma => "gamma",
        }
    }

    pub fn apply(self, base: &ExperimentConfig, value: f64) -> Result<ExperimentConfig, ExperimentError> {
        let mut cfg = base.clone();
        match self {
            SweepAxis::PerCycleK => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(ExperimentError::Sweep(format!("per_cycle_k must be a positive integer, got {value}")));
                }
                cfg.per_cycle_k = value as usize;
            }
            SweepAxis::LearningRate => cfg.learner.learning_rate = value,
            SweepAxis::Alpha => cfg.alpha = value,
            SweepAxis::Gamma => cfg.gamma = value,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub final_miou: Option<f64>,
    pub final_iou: Vec<Option<f64>>,
    pub curve: Vec<Option<f64>>,
    /// Candidate-set size of each cycle (scored strategies).
    pub candidate_counts: Vec<Option<usize>>,
    pub final_labeled: usize,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub strategy: Strategy,
    pub rows: Vec<SweepRow>,
}

/// One full run per value of `axis`; every run uses the base seed.
pub fn run_sweep(
    ds: Arc<Dataset>,
    base: &ExperimentConfig,
    axis: SweepAxis,
    values: &[f64],
) -> Result<SweepReport, ExperimentError> {
    if values.is_empty() {
        return Err(ExperimentError::Sweep("no values given".into()));
    }
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let cfg = axis.apply(base, value)?;
        let run = run_experiment(Arc::clone(&ds), &cfg)?;
        rows.push(SweepRow {
            value,
            final_miou: run.final_report.miou,
            final_iou: run.final_report.iou.clone(),
            curve: run.records.iter().map(|r| r.miou).collect(),
            candidate_counts: run.records.iter().map(|r| r.candidate_count).collect(),
            final_labeled: run.final_labeled,
            wall_time: run.wall_time,
        });
    }
    Ok(SweepReport {
        axis,
        strategy: base.strategy,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};

    fn tiny(n: usize, seed: u64) -> Arc<Dataset> {
        let cfg = SynthConfig {
            num_samples: n,
            height: 8,
            width: 8,
            ..SynthConfig::desk_profile(seed)
        };
        Arc::new(generate(&cfg).unwrap())
    }

    fn fast_cfg() -> ExperimentConfig {
        ExperimentConfig {
            learner: LearnerConfig {
                epochs: 2,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn splits_are_disjoint_and_cover() {
        let ds = tiny(40, 1);
        let s = Splits::new(&ds, &fast_cfg());
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (28, 6, 6));
        let all: BTreeSet<_> = s.train.iter().chain(&s.val).chain(&s.test).collect();
        assert_eq!(all.len(), 40);
    }

    #[test]
    fn random_bookkeeping() {
        // 10-sample pool (all training), 3 initial, 2 per cycle for 2 cycles.
        let ds = tiny(12, 2);
        let cfg = ExperimentConfig {
            strategy: Strategy::Random,
            per_cycle_k: 2,
            cycles: 2,
            initial_labeled: 3,
            eval_split: crate::config::EvalSplit {
                train: 10.0 / 12.0,
                val: 1.0 / 12.0,
                test: 1.0 / 12.0,
            },
            ..fast_cfg()
        };
        let mut s = Session::new(ds, cfg).unwrap();
        assert_eq!(s.splits().train.len(), 10);
        assert_eq!(s.pool().labeled_ids.len(), 3);
        s.begin_cycle().unwrap();
        assert_eq!(s.pool().labeled_ids.len(), 5);
        s.begin_cycle().unwrap();
        assert_eq!(s.pool().labeled_ids.len(), 7);
        assert_eq!(s.begin_cycle().unwrap(), CycleOutcome::Finished);
        assert_eq!(s.records().len(), 2);
        assert_eq!(s.records()[1].labeled_before, 5);
    }

    #[test]
    fn human_mode_pending_then_commit() {
        let ds = tiny(30, 3);
        let cfg = ExperimentConfig {
            per_cycle_k: 3,
            cycles: 2,
            initial_labeled: 5,
            annotation_mode: AnnotationMode::Human,
            ..fast_cfg()
        };
        let mut s = Session::new(Arc::clone(&ds), cfg).unwrap();
        let CycleOutcome::AwaitingLabels(ids) = s.begin_cycle().unwrap() else {
            panic!("expected pending ids");
        };
        assert_eq!(ids.len(), 3);
        assert!(matches!(s.begin_cycle(), Err(ExperimentError::PendingLabels(3))));
        assert!(s.records().is_empty());
        for (i, id) in ids.iter().enumerate() {
            let mask = s.prediction(id).unwrap();
            let out = s.submit_label(mask).unwrap();
            if i + 1 < ids.len() {
                assert_eq!(out, SubmitOutcome::Accepted { remaining: ids.len() - i - 1 });
            } else {
                assert_eq!(out, SubmitOutcome::CycleCompleted { cycle: 1 });
            }
        }
        assert_eq!(s.records().len(), 1);
        assert_eq!(s.pool().labeled_ids.len(), 8);
        let again = ds.get(&ids[0]).unwrap().mask.clone();
        assert!(matches!(
            s.submit_label(again),
            Err(ExperimentError::Pool(PoolError::DoubleLabeling(_)))
        ));
    }

    #[test]
    fn bad_mask_rejected() {
        let ds = tiny(30, 3);
        let cfg = ExperimentConfig {
            per_cycle_k: 2,
            initial_labeled: 5,
            annotation_mode: AnnotationMode::Human,
            ..fast_cfg()
        };
        let mut s = Session::new(ds, cfg).unwrap();
        let CycleOutcome::AwaitingLabels(ids) = s.begin_cycle().unwrap() else {
            panic!()
        };
        let wrong = Mask::new(ids[0].clone(), 2, 2, vec![0; 4]).unwrap();
        assert!(matches!(s.submit_label(wrong), Err(ExperimentError::InvalidMask { .. })));
        let out_of_range = Mask::new(ids[0].clone(), 8, 8, vec![9; 64]).unwrap();
        assert!(matches!(s.submit_label(out_of_range), Err(ExperimentError::InvalidMask { .. })));
        assert_eq!(s.pool().pending.len(), 2);
    }

    #[test]
    fn checkpoint_round_trip_mid_cycle() {
        let ds = tiny(30, 4);
        let cfg = ExperimentConfig {
            per_cycle_k: 3,
            cycles: 3,
            initial_labeled: 5,
            annotation_mode: AnnotationMode::Human,
            ..fast_cfg()
        };
        let mut s = Session::new(Arc::clone(&ds), cfg).unwrap();
        let CycleOutcome::AwaitingLabels(ids) = s.begin_cycle().unwrap() else {
            panic!()
        };
        let m = s.prediction(&ids[0]).unwrap();
        s.submit_label(m.clone()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        s.save_checkpoint(dir.path()).unwrap();
        let back = Session::load_checkpoint(ds, dir.path()).unwrap();
        assert_eq!(back.pool(), s.pool());
        assert_eq!(back.learner(), s.learner());
        assert_eq!(back.open_cycle(), s.open_cycle());
        assert_eq!(back.annotation(&ids[0]), Some(&m));
        assert_eq!(back.config(), s.config());
    }

    #[test]
    fn sweep_structure_and_errors() {
        let ds = tiny(40, 5);
        let base = ExperimentConfig {
            cycles: 1,
            initial_labeled: 4,
            ..fast_cfg()
        };
        let report = run_sweep(Arc::clone(&ds), &base, SweepAxis::PerCycleK, &[2.0, 4.0]).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.rows[0].final_labeled, 6);
        assert_eq!(report.rows[1].final_labeled, 8);
        assert!(run_sweep(Arc::clone(&ds), &base, SweepAxis::Gamma, &[]).is_err());
        assert!("epochs".parse::<SweepAxis>().is_err());
        assert!(run_sweep(ds, &base, SweepAxis::PerCycleK, &[1.5]).is_err());
    }
}
