//! Confusion counting and per-class IoU / gap reporting.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Mask;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("shape mismatch: prediction {pred:?} vs truth {truth:?}")]
    ShapeMismatch {
        pred: (usize, usize),
        truth: (usize, usize),
    },
    #[error("label {label} out of range for {num_classes} classes")]
    LabelRange { label: u8, num_classes: usize },
    #[error("cannot merge counts over {0} and {1} classes")]
    ClassCount(usize, usize),
}

/// Per-class true positive, false positive and false negative pixel counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
}

impl ConfusionCounts {
    pub fn new(num_classes: usize) -> Self {
        ConfusionCounts {
            tp: vec![0; num_classes],
            fp: vec![0; num_classes],
            fn_: vec![0; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.tp.len()
    }

    /// Adds the pixel counts of one prediction/truth pair.
    pub fn accumulate(&mut self, pred: &Mask, truth: &Mask) -> Result<(), MetricsError> {
        if !pred.same_shape(truth) {
            return Err(MetricsError::ShapeMismatch {
                pred: (pred.height(), pred.width()),
                truth: (truth.height(), truth.width()),
            });
        }
        let k = self.num_classes();
        for (&p, &t) in pred.labels().iter().zip(truth.labels()) {
            let (pu, tu) = (usize::from(p), usize::from(t));
            if pu >= k || tu >= k {
                return Err(MetricsError::LabelRange {
                    label: p.max(t),
                    num_classes: k,
                });
            }
            if pu == tu {
                self.tp[pu] += 1;
            } else {
                self.fp[pu] += 1;
                self.fn_[tu] += 1;
            }
        }
        Ok(())
    }

    /// Exact associative merge.
    pub fn merge(&mut self, other: &ConfusionCounts) -> Result<(), MetricsError> {
        if other.num_classes() != self.num_classes() {
            return Err(MetricsError::ClassCount(self.num_classes(), other.num_classes()));
        }
        for c in 0..self.num_classes() {
            self.tp[c] += other.tp[c];
            self.fp[c] += other.fp[c];
            self.fn_[c] += other.fn_[c];
        }
        Ok(())
    }

    pub fn report(&self, cycle: usize) -> ClassIouReport {
        iou_report(self, cycle)
    }
}

/// Per-class IoU and gap snapshot for one cycle. `None` marks classes absent
/// from both prediction and ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassIouReport {
    pub cycle: usize,
    pub iou: Vec<Option<f64>>,
    pub gap: Vec<Option<f64>>,
    /// Mean over defined classes; `None` if no class is defined.
    pub miou: Option<f64>,
}

impl ClassIouReport {
    /// Builds a report from per-class IoU values, deriving gaps and mIoU.
    pub fn from_iou(cycle: usize, iou: Vec<Option<f64>>) -> Self {
        let gap = iou.iter().map(|v| v.map(|x| 1.0 - x)).collect();
        let miou = mean_defined(&iou);
        ClassIouReport {
            cycle,
            iou,
            gap,
            miou,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.iou.len()
    }

    pub fn num_defined(&self) -> usize {
        self.iou.iter().flatten().count()
    }
}

/// Mean of the defined entries.
pub fn mean_defined(values: &[Option<f64>]) -> Option<f64> {
    let (sum, n) = values
        .iter()
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn accumulate(
    mut conf: ConfusionCounts,
    pred: &Mask,
    truth: &Mask,
) -> Result<ConfusionCounts, MetricsError> {
    conf.accumulate(pred, truth)?;
    Ok(conf)
}

pub fn iou_report(conf: &ConfusionCounts, cycle: usize) -> ClassIouReport {
    let iou = (0..conf.num_classes())
        .map(|c| {
            let denom = conf.tp[c] + conf.fp[c] + conf.fn_[c];
            (denom > 0).then(|| conf.tp[c] as f64 / denom as f64)
        })
        .collect();
    ClassIouReport::from_iou(cycle, iou)
}
