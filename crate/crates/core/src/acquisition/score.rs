use serde::{Deserialize, Serialize};

use super::{AcquisitionError, WeightVector};
use crate::tensor::{ProbMap, SampleId, PROB_EPSILON};

/// Form of the weighted pixel uncertainty.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyForm {
    /// `sum_k p_k * w_k * H(p)`
    #[default]
    Literal,
    /// `-sum_k w_k * p_k * ln p_k`
    WeightedLogsum,
}

/// Image-level acquisition score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcauScore {
    pub sample_id: SampleId,
    pub score: f64,
    /// Per-pixel weighted uncertainty, kept only when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixel_dyn: Option<Vec<f64>>,
    pub num_pixels: usize,
}

impl DcauScore {
    pub fn scalar(sample_id: SampleId, score: f64, num_pixels: usize) -> Self {
        DcauScore {
            sample_id,
            score,
            pixel_dyn: None,
            num_pixels,
        }
    }
}

#[inline]
fn plogp(p: f64) -> f64 {
    p * p.clamp(PROB_EPSILON, 1.0).ln()
}

/// Shannon entropy (natural log) of one pixel distribution. Probabilities are
/// clamped to `[1e-12, 1]` inside the logarithm only, so `0 * ln 0` is 0.
pub fn pixel_entropy(p: &[f64]) -> f64 {
    -p.iter().map(|&pk| plogp(pk)).sum::<f64>()
}

/// Weighted pixel uncertainty `sum_k p_k * w_k * H(p)`, evaluated term by
/// term. `weights` is dense (absent classes as 0).
pub fn dynamic_pixel_uncertainty(p: &[f64], weights: &[f64]) -> f64 {
    let h = pixel_entropy(p);
    p.iter().zip(weights).map(|(pk, wk)| pk * wk * h).sum()
}

/// Alternative reading `-sum_k w_k p_k ln p_k`.
pub fn weighted_logsum_uncertainty(p: &[f64], weights: &[f64]) -> f64 {
    -p.iter().zip(weights).map(|(&pk, wk)| wk * plogp(pk)).sum::<f64>()
}

/// Mean weighted pixel uncertainty over the map. Uses the factored form
/// `H(p) * <w>_p` for the literal variant.
pub fn dcau_score(
    pm: &ProbMap,
    weights: &WeightVector,
    variant: UncertaintyForm,
    keep_pixel_map: bool,
) -> Result<DcauScore, AcquisitionError> {
    if weights.num_classes() != pm.num_classes() {
        return Err(AcquisitionError::ClassMismatch {
            weights: weights.num_classes(),
            map: pm.num_classes(),
        });
    }
    let w = weights.dense();
    let mut pixel_dyn = keep_pixel_map.then(|| Vec::with_capacity(pm.num_pixels()));
    let mut total = 0.0;
    for row in pm.rows() {
        let value = match variant {
            UncertaintyForm::Literal => {
                let mut plogp_sum = 0.0;
                let mut weighted = 0.0;
                for (&pk, &wk) in row.iter().zip(&w) {
                    plogp_sum += plogp(pk);
                    weighted += pk * wk;
                }
                -plogp_sum * weighted
            }
            UncertaintyForm::WeightedLogsum => weighted_logsum_uncertainty(row, &w),
        };
        total += value;
        if let Some(m) = pixel_dyn.as_mut() {
            m.push(value);
        }
    }
    let n = pm.num_pixels();
    Ok(DcauScore {
        sample_id: pm.id().clone(),
        score: total / n as f64,
        pixel_dyn,
        num_pixels: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn entropy_cases() {
        assert_abs_diff_eq!(pixel_entropy(&[0.25; 4]), 4f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(pixel_entropy(&[0.25; 4]), 1.3862944, epsilon = 1e-7);
        assert_eq!(pixel_entropy(&[0.0, 1.0, 0.0]), 0.0);
        assert_abs_diff_eq!(pixel_entropy(&[0.5, 0.5]), std::f64::consts::LN_2, epsilon = 1e-12);
    }

    #[test]
    fn weighted_uncertainty_cases() {
        let v = dynamic_pixel_uncertainty(&[0.5, 0.5], &[0.8, 0.2]);
        assert_abs_diff_eq!(v, 2f64.ln() * 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(v, 0.3465736, epsilon = 1e-7);

        let p = [0.1, 0.6, 0.3];
        let u = [1.0 / 3.0; 3];
        assert_abs_diff_eq!(
            dynamic_pixel_uncertainty(&p, &u),
            pixel_entropy(&p) / 3.0,
            epsilon = 1e-15
        );
        assert_eq!(dynamic_pixel_uncertainty(&[1.0, 0.0], &[0.3, 0.7]), 0.0);
    }

    #[test]
    fn mean_over_pixels() {
        // Two pixels: one uniform two-class pixel, one certain pixel.
        let pm = ProbMap::new("a".into(), 1, 2, 2, vec![0.5, 0.5, 1.0, 0.0]).unwrap();
        let w = WeightVector {
            weights: vec![Some(0.8), Some(0.2)],
            alpha: 0.5,
            cycle: 1,
        };
        let s = dcau_score(&pm, &w, UncertaintyForm::Literal, true).unwrap();
        let dyn_map = s.pixel_dyn.as_ref().unwrap();
        assert_abs_diff_eq!(dyn_map[0], 0.5 * 2f64.ln(), epsilon = 1e-15);
        assert_eq!(dyn_map[1], 0.0);
        assert_abs_diff_eq!(s.score, (dyn_map[0] + dyn_map[1]) / 2.0, epsilon = 1e-15);
        assert_eq!(s.num_pixels, 2);
    }

    #[test]
    fn one_hot_map_scores_zero() {
        let pm = ProbMap::new("a".into(), 2, 1, 3, vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let w = WeightVector::uniform(3, 0);
        for variant in [UncertaintyForm::Literal, UncertaintyForm::WeightedLogsum] {
            assert_eq!(dcau_score(&pm, &w, variant, false).unwrap().score, 0.0);
        }
    }

    #[test]
    fn logsum_variant_with_uniform_weights_is_scaled_entropy() {
        let p = [0.2, 0.5, 0.3];
        let u = [1.0 / 3.0; 3];
        assert_abs_diff_eq!(
            weighted_logsum_uncertainty(&p, &u),
            pixel_entropy(&p) / 3.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn class_mismatch_rejected() {
        let pm = ProbMap::new("a".into(), 1, 1, 2, vec![0.5, 0.5]).unwrap();
        let err = dcau_score(&pm, &WeightVector::uniform(3, 0), UncertaintyForm::Literal, false);
        assert!(matches!(err, Err(AcquisitionError::ClassMismatch { .. })));
    }
}
