use serde::{Deserialize, Serialize};

use super::AcquisitionError;
use crate::metrics::ClassIouReport;

/// Per-class weights derived from IoU gaps. Classes whose IoU is undefined
/// carry no weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub weights: Vec<Option<f64>>,
    pub alpha: f64,
    pub cycle: usize,
}

impl WeightVector {
    /// Uniform `1/K` weights over all classes.
    pub fn uniform(num_classes: usize, cycle: usize) -> Self {
        WeightVector {
            weights: vec![Some(1.0 / num_classes as f64); num_classes],
            alpha: 1.0,
            cycle,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.weights.len()
    }

    /// Weights with absent classes set to zero.
    pub fn dense(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w.unwrap_or(0.0)).collect()
    }
}

/// Power-law normalization of the defined gaps: `gap_c^alpha / sum_j gap_j^alpha`.
/// Falls back to uniform weights over defined classes when every defined gap
/// is zero.
pub fn dynamic_weights(report: &ClassIouReport, alpha: f64) -> Result<WeightVector, AcquisitionError> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(AcquisitionError::InvalidAlpha(alpha));
    }
    let powered: Vec<Option<f64>> = report
        .gap
        .iter()
        .map(|g| g.map(|g| g.max(0.0).powf(alpha)))
        .collect();
    let defined = powered.iter().flatten().count();
    if defined == 0 {
        return Err(AcquisitionError::NoDefinedClasses);
    }
    let total: f64 = powered.iter().flatten().sum();
    let weights = if total > 0.0 {
        powered.iter().map(|p| p.map(|p| p / total)).collect()
    } else {
        let u = 1.0 / defined as f64;
        powered.iter().map(|p| p.map(|_| u)).collect()
    };
    Ok(WeightVector {
        weights,
        alpha,
        cycle: report.cycle,
    })
}
