use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{AcquisitionError, DcauScore};
use crate::tensor::SampleId;

/// Pool score statistics and the derived threshold `theta = mean + gamma * std`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub gamma: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Ids scoring at or above the threshold, score-descending.
    pub candidate_ids: Vec<SampleId>,
    /// Final picks, score-descending.
    pub selected_ids: Vec<SampleId>,
    /// Number of picks taken from below the threshold to fill the budget.
    pub filled_below_threshold: usize,
}

pub fn adaptive_threshold(scores: &[DcauScore], gamma: f64) -> Result<ThresholdStats, AcquisitionError> {
    if scores.is_empty() {
        return Err(AcquisitionError::EmptyPool);
    }
    if !gamma.is_finite() {
        return Err(AcquisitionError::InvalidGamma(gamma));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().map(|s| s.score).sum::<f64>() / n;
    let var = scores
        .iter()
        .map(|s| (s.score - mean).powi(2))
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    Ok(ThresholdStats {
        mean,
        std,
        gamma,
        theta: mean + gamma * std,
    })
}

/// Score-descending order, ties by ascending id.
fn ranking(a: &DcauScore, b: &DcauScore) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.sample_id.cmp(&b.sample_id))
}

/// Takes the `k` best candidates at or above `theta`; when fewer than `k`
/// candidates exist, the budget is filled with the best samples below it.
pub fn select(scores: &[DcauScore], stats: &ThresholdStats, k: usize) -> SelectionResult {
    let mut ranked: Vec<&DcauScore> = scores.iter().collect();
    ranked.sort_by(|a, b| ranking(a, b));

    let candidate_ids: Vec<SampleId> = ranked
        .iter()
        .filter(|s| s.score >= stats.theta)
        .map(|s| s.sample_id.clone())
        .collect();
    let take = k.min(ranked.len());
    let selected_ids: Vec<SampleId> = ranked[..take].iter().map(|s| s.sample_id.clone()).collect();
    let filled_below_threshold = take.saturating_sub(candidate_ids.len());
    SelectionResult {
        candidate_ids,
        selected_ids,
        filled_below_threshold,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pool(entries: &[(&str, f64)]) -> Vec<DcauScore> {
        entries
            .iter()
            .map(|(id, s)| DcauScore::scalar((*id).into(), *s, 1))
            .collect()
    }

    #[test]
    fn threshold_uses_population_std() {
        let p = pool(&[("a", 0.1), ("b", 0.2), ("c", 0.3)]);
        let t = adaptive_threshold(&p, 0.5).unwrap();
        assert_abs_diff_eq!(t.mean, 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(t.std, (0.02f64 / 3.0).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(t.std, 0.0816497, epsilon = 1e-7);
        assert_abs_diff_eq!(t.theta, 0.2408248, epsilon = 1e-7);
        assert_eq!(t.theta, t.mean + t.gamma * t.std);

        let t0 = adaptive_threshold(&p, 0.0).unwrap();
        assert_eq!(t0.theta, t0.mean);
    }

    #[test]
    fn single_score_threshold_is_the_score() {
        let t = adaptive_threshold(&pool(&[("a", 0.37)]), 3.0).unwrap();
        assert_eq!(t.std, 0.0);
        assert_eq!(t.theta, 0.37);
    }

    #[test]
    fn empty_pool_is_error() {
        assert_eq!(adaptive_threshold(&[], 0.5), Err(AcquisitionError::EmptyPool));
    }

    #[test]
    fn fill_below_threshold() {
        let p = pool(&[("a", 0.1), ("b", 0.2), ("c", 0.3)]);
        let t = adaptive_threshold(&p, 0.5).unwrap();
        let r = select(&p, &t, 2);
        assert_eq!(r.candidate_ids, vec![SampleId::from("c")]);
        assert_eq!(r.selected_ids, vec![SampleId::from("c"), SampleId::from("b")]);
        assert_eq!(r.filled_below_threshold, 1);
    }

    #[test]
    fn budget_larger_than_pool() {
        let p = pool(&[("a", 0.1), ("b", 0.3), ("c", 0.2)]);
        let t = adaptive_threshold(&p, 0.5).unwrap();
        let r = select(&p, &t, 10);
        let ids: Vec<&str> = r.selected_ids.iter().map(SampleId::as_str).collect();
        assert_eq!(ids, ["b", "c", "a"]);
    }

    #[test]
    fn ties_go_to_smallest_id() {
        let p = pool(&[("z", 0.5), ("m", 0.5), ("q", 0.5)]);
        let t = adaptive_threshold(&p, 0.5).unwrap();
        let r = select(&p, &t, 1);
        assert_eq!(r.selected_ids, vec![SampleId::from("m")]);
        assert_eq!(r.filled_below_threshold, 0);
    }

    #[test]
    fn inclusive_candidate_rule() {
        let p = pool(&[("a", 0.2), ("b", 0.2)]);
        let t = adaptive_threshold(&p, 1.0).unwrap();
        assert_eq!(select(&p, &t, 2).candidate_ids.len(), 2);
    }
}
