use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{pixel_entropy, AcquisitionError};
use crate::tensor::{ProbMap, SampleId};

/// Mean unweighted pixel entropy.
pub fn baseline_entropy_score(pm: &ProbMap) -> f64 {
    pm.rows().map(pixel_entropy).sum::<f64>() / pm.num_pixels() as f64
}

/// Uniform sample of `k` ids without replacement. The result depends only on
/// the set of ids, `k` and `seed`.
pub fn baseline_random_select(pool_ids: &[SampleId], k: usize, seed: u64) -> Vec<SampleId> {
    let mut sorted: Vec<&SampleId> = pool_ids.iter().collect();
    sorted.sort();
    sorted.dedup();
    let take = k.min(sorted.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand::seq::index::sample(&mut rng, sorted.len(), take)
        .into_iter()
        .map(|i| sorted[i].clone())
        .collect()
}

/// Greedy k-center: repeatedly takes the unlabeled sample farthest (Euclidean)
/// from the labeled-plus-selected set. Ties go to the smallest id; with no
/// labeled samples the first pick is the smallest unlabeled id.
pub fn baseline_coreset_select(
    features: &[(SampleId, Vec<f64>)],
    labeled_ids: &BTreeSet<SampleId>,
    k: usize,
) -> Result<Vec<SampleId>, AcquisitionError> {
    let dim = features.first().map_or(0, |(_, f)| f.len());
    if features.iter().any(|(_, f)| f.len() != dim) {
        return Err(AcquisitionError::FeatureDimension);
    }
    let (centers, mut pool): (Vec<_>, Vec<_>) = features
        .iter()
        .partition(|(id, _)| labeled_ids.contains(id));
    pool.sort_by(|a, b| a.0.cmp(&b.0));
    pool.dedup_by(|a, b| a.0 == b.0);

    let sq_dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    };
    let mut min_dist: Vec<f64> = pool
        .iter()
        .map(|(_, f)| {
            centers
                .iter()
                .map(|(_, c)| sq_dist(f, c))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mut taken = vec![false; pool.len()];
    let mut out = Vec::with_capacity(k.min(pool.len()));

    while out.len() < k.min(pool.len()) {
        let mut best: Option<usize> = None;
        for i in 0..pool.len() {
            if taken[i] {
                continue;
            }
            match best {
                Some(b) if min_dist[i] <= min_dist[b] => {}
                _ => best = Some(i),
            }
        }
        let Some(b) = best else { break };
        taken[b] = true;
        out.push(pool[b].0.clone());
        let center = &pool[b].1;
        for i in 0..pool.len() {
            if !taken[i] {
                let d = sq_dist(&pool[i].1, center);
                if d < min_dist[i] {
                    min_dist[i] = d;
                }
            }
        }
    }
    Ok(out)
}
