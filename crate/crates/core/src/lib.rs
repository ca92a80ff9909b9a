//! Pool-based active learning for semantic segmentation with class-aware
//! uncertainty sampling.
//!
//! The pieces, bottom-up: [`tensor`] and [`dataset`] hold images, masks and
//! probability maps; [`metrics`] turns predictions into per-class IoU;
//! [`acquisition`] scores and selects unlabeled samples; [`learner`] is a small
//! per-pixel classifier; [`pool`] tracks labeled/unlabeled/pending ids;
//! [`experiment`] runs the loop; [`report`] writes its outputs. [`synth`]
//! generates imbalanced toy datasets for CPU-scale experiments.

pub mod acquisition;
pub mod config;
pub mod dataset;
pub mod experiment;
pub mod learner;
pub mod metrics;
pub mod pool;
pub mod report;
pub mod seeding;
pub mod synth;
pub mod tensor;

pub use acquisition::Strategy;
pub use config::{AnnotationMode, ExperimentConfig};
pub use dataset::{load_dataset, write_dataset, Dataset, Sample};
pub use experiment::{run_experiment, CycleRecord, Session};
pub use tensor::{Image, Mask, ProbMap, SampleId};
