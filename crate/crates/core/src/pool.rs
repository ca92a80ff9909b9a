//! Labeled / unlabeled / pending partition of the training pool with budget
//! and cycle accounting.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Mask, SampleId};

#[derive(Debug, Error, PartialEq)]
pub enum PoolError {
    #[error("initial labeled count {requested} exceeds pool size {available}")]
    InitialTooLarge { requested: usize, available: usize },
    #[error("unknown id {0}")]
    UnknownId(SampleId),
    #[error("double-labeling: {0} is already labeled")]
    DoubleLabeling(SampleId),
    #[error("{0} is not awaiting a label")]
    NotPending(SampleId),
    #[error("{0} is already pending")]
    AlreadyPending(SampleId),
    #[error("budget exhausted: {consumed} + {requested} exceeds total budget {total}")]
    BudgetExhausted {
        consumed: usize,
        requested: usize,
        total: usize,
    },
    #[error("pending set would hold {0} ids, more than per-cycle k = {1}")]
    PendingOverflow(usize, usize),
    #[error("{ids} ids but {masks} masks")]
    MaskCount { ids: usize, masks: usize },
    #[error("mask for {mask} submitted under id {id}")]
    MaskId { id: SampleId, mask: SampleId },
    #[error("duplicate id {0} in one commit")]
    DuplicateInBatch(SampleId),
    #[error("pool invariant violated: {0}")]
    Invariant(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolState {
    pub labeled_ids: BTreeSet<SampleId>,
    pub unlabeled_ids: BTreeSet<SampleId>,
    pub pending: BTreeSet<SampleId>,
    pub cycle: usize,
    pub per_cycle_k: usize,
    pub total_budget: usize,
    pub consumed: usize,
    /// Ids seen at initialization; fixed for the life of the pool.
    pub total_ids: usize,
}

impl PoolState {
    /// Seeded uniform split into an initial labeled set and the unlabeled pool.
    pub fn init(
        ids: impl IntoIterator<Item = SampleId>,
        initial_labeled: usize,
        per_cycle_k: usize,
        total_budget: usize,
        seed: u64,
    ) -> Result<Self, PoolError> {
        let mut all: Vec<SampleId> = ids.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        if initial_labeled > all.len() {
            return Err(PoolError::InitialTooLarge {
                requested: initial_labeled,
                available: all.len(),
            });
        }
        let total_ids = all.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        all.shuffle(&mut rng);
        let unlabeled_ids = all.split_off(initial_labeled).into_iter().collect();
        Ok(PoolState {
            labeled_ids: all.into_iter().collect(),
            unlabeled_ids,
            pending: BTreeSet::new(),
            cycle: 0,
            per_cycle_k,
            total_budget,
            consumed: 0,
            total_ids,
        })
    }

    pub fn remaining_budget(&self) -> usize {
        self.total_budget.saturating_sub(self.consumed)
    }

    /// Number of samples the next cycle may request.
    pub fn next_cycle_capacity(&self) -> usize {
        self.per_cycle_k
            .min(self.unlabeled_ids.len())
            .min(self.remaining_budget().saturating_sub(self.pending.len()))
    }

    /// True when no further cycle can acquire anything.
    pub fn is_exhausted(&self) -> bool {
        self.pending.is_empty() && self.next_cycle_capacity() == 0
    }

    /// Moves selected ids from the unlabeled pool into `pending` (human mode).
    pub fn mark_pending(&mut self, ids: &[SampleId]) -> Result<(), PoolError> {
        let mut seen = BTreeSet::new();
        for id in ids {
            if !seen.insert(id) {
                return Err(PoolError::DuplicateInBatch(id.clone()));
            }
            if self.pending.contains(id) {
                return Err(PoolError::AlreadyPending(id.clone()));
            }
            if self.labeled_ids.contains(id) {
                return Err(PoolError::DoubleLabeling(id.clone()));
            }
            if !self.unlabeled_ids.contains(id) {
                return Err(PoolError::UnknownId(id.clone()));
            }
        }
        if self.pending.len() + ids.len() > self.per_cycle_k {
            return Err(PoolError::PendingOverflow(
                self.pending.len() + ids.len(),
                self.per_cycle_k,
            ));
        }
        self.check_budget(self.pending.len() + ids.len())?;
        for id in ids {
            self.unlabeled_ids.remove(id);
            self.pending.insert(id.clone());
        }
        Ok(())
    }

    fn check_budget(&self, requested: usize) -> Result<(), PoolError> {
        if self.consumed + requested > self.total_budget {
            return Err(PoolError::BudgetExhausted {
                consumed: self.consumed,
                requested,
                total: self.total_budget,
            });
        }
        Ok(())
    }

    /// Moves ids into the labeled set. While a pending set exists only its
    /// members are accepted; otherwise ids come straight from the unlabeled
    /// pool. The cycle counter advances once nothing is pending. Returns
    /// whether the cycle advanced.
    pub fn commit_labels(&mut self, ids: &[SampleId], masks: &[Mask]) -> Result<bool, PoolError> {
        if ids.len() != masks.len() {
            return Err(PoolError::MaskCount {
                ids: ids.len(),
                masks: masks.len(),
            });
        }
        let from_pending = !self.pending.is_empty();
        let mut seen = BTreeSet::new();
        for (id, mask) in ids.iter().zip(masks) {
            if mask.id() != id {
                return Err(PoolError::MaskId {
                    id: id.clone(),
                    mask: mask.id().clone(),
                });
            }
            if !seen.insert(id) {
                return Err(PoolError::DuplicateInBatch(id.clone()));
            }
            if self.labeled_ids.contains(id) {
                return Err(PoolError::DoubleLabeling(id.clone()));
            }
            let known = if from_pending {
                self.pending.contains(id)
            } else {
                self.unlabeled_ids.contains(id)
            };
            if !known {
                return Err(if self.unlabeled_ids.contains(id) {
                    PoolError::NotPending(id.clone())
                } else {
                    PoolError::UnknownId(id.clone())
                });
            }
        }
        self.check_budget(ids.len())?;
        for id in ids {
            if from_pending {
                self.pending.remove(id);
            } else {
                self.unlabeled_ids.remove(id);
            }
            self.labeled_ids.insert(id.clone());
        }
        self.consumed += ids.len();
        let advanced = self.pending.is_empty() && !ids.is_empty();
        if advanced {
            self.cycle += 1;
        }
        Ok(advanced)
    }

    pub fn check_invariants(&self) -> Result<(), PoolError> {
        let fail = |msg: String| Err(PoolError::Invariant(msg));
        if let Some(id) = self.labeled_ids.intersection(&self.unlabeled_ids).next() {
            return fail(format!("{id} both labeled and unlabeled"));
        }
        if let Some(id) = self.pending.intersection(&self.unlabeled_ids).next() {
            return fail(format!("{id} both pending and unlabeled"));
        }
        if let Some(id) = self.pending.intersection(&self.labeled_ids).next() {
            return fail(format!("{id} both pending and labeled"));
        }
        let total = self.labeled_ids.len() + self.unlabeled_ids.len() + self.pending.len();
        if total != self.total_ids {
            return fail(format!("{total} ids tracked, expected {}", self.total_ids));
        }
        if self.consumed > self.total_budget {
            return fail(format!("consumed {} > budget {}", self.consumed, self.total_budget));
        }
        if self.pending.len() > self.per_cycle_k {
            return fail(format!("{} pending > k {}", self.pending.len(), self.per_cycle_k));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("pool state serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Expected labeled-set size after `cycles` oracle cycles.
pub fn closed_form_labeled(
    initial: usize,
    initial_unlabeled: usize,
    cycles: usize,
    per_cycle_k: usize,
    total_budget: usize,
) -> usize {
    initial + (cycles * per_cycle_k).min(initial_unlabeled).min(total_budget)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<SampleId> {
        (0..n).map(|i| SampleId::new(format!("s{i:02}"))).collect()
    }

    fn masks(ids: &[SampleId]) -> Vec<Mask> {
        ids.iter()
            .map(|id| Mask::new(id.clone(), 1, 1, vec![0]).unwrap())
            .collect()
    }

    #[test]
    fn init_counts() {
        let p = PoolState::init(ids(10), 3, 2, 100, 1).unwrap();
        assert_eq!(p.labeled_ids.len(), 3);
        assert_eq!(p.unlabeled_ids.len(), 7);
        assert_eq!((p.cycle, p.consumed), (0, 0));
        p.check_invariants().unwrap();
    }

    #[test]
    fn init_deterministic() {
        let a = PoolState::init(ids(30), 7, 2, 100, 9).unwrap();
        let b = PoolState::init(ids(30), 7, 2, 100, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn init_all_labeled() {
        let p = PoolState::init(ids(4), 4, 2, 10, 0).unwrap();
        assert!(p.unlabeled_ids.is_empty());
        assert!(p.is_exhausted());
    }

    #[test]
    fn init_too_large() {
        assert_eq!(
            PoolState::init(ids(4), 5, 2, 10, 0),
            Err(PoolError::InitialTooLarge {
                requested: 5,
                available: 4
            })
        );
    }

    #[test]
    fn commit_pending_conserves() {
        let mut p = PoolState::init(ids(10), 3, 2, 100, 1).unwrap();
        let pick: Vec<SampleId> = p.unlabeled_ids.iter().take(2).cloned().collect();
        p.mark_pending(&pick).unwrap();
        assert_eq!(p.pending.len(), 2);
        assert!(!p.commit_labels(&pick[..1], &masks(&pick[..1])).unwrap());
        assert_eq!(p.cycle, 0);
        assert!(p.commit_labels(&pick[1..], &masks(&pick[1..])).unwrap());
        assert_eq!(p.labeled_ids.len(), 5);
        assert!(p.pending.is_empty());
        assert_eq!((p.cycle, p.consumed), (1, 2));
        p.check_invariants().unwrap();
    }

    #[test]
    fn double_labeling_rejected() {
        let mut p = PoolState::init(ids(10), 3, 2, 100, 1).unwrap();
        let done = p.labeled_ids.iter().next().cloned().unwrap();
        assert_eq!(
            p.commit_labels(std::slice::from_ref(&done), &masks(std::slice::from_ref(&done))),
            Err(PoolError::DoubleLabeling(done))
        );
    }

    #[test]
    fn budget_exhausted() {
        let mut p = PoolState::init(ids(10), 3, 5, 2, 1).unwrap();
        let pick: Vec<SampleId> = p.unlabeled_ids.iter().take(3).cloned().collect();
        let err = p.commit_labels(&pick, &masks(&pick)).unwrap_err();
        assert!(err.to_string().contains("budget exhausted"));
        assert_eq!(p.next_cycle_capacity(), 2);
    }

    #[test]
    fn unknown_and_not_pending() {
        let mut p = PoolState::init(ids(10), 3, 2, 100, 1).unwrap();
        let ghost = SampleId::from("nope");
        assert_eq!(
            p.commit_labels(std::slice::from_ref(&ghost), &masks(std::slice::from_ref(&ghost))),
            Err(PoolError::UnknownId(ghost))
        );
        let un: Vec<SampleId> = p.unlabeled_ids.iter().take(2).cloned().collect();
        p.mark_pending(&un[..1]).unwrap();
        assert_eq!(
            p.commit_labels(&un[1..], &masks(&un[1..])),
            Err(PoolError::NotPending(un[1].clone()))
        );
    }

    #[test]
    fn mask_id_must_match() {
        let mut p = PoolState::init(ids(4), 1, 2, 100, 1).unwrap();
        let un: Vec<SampleId> = p.unlabeled_ids.iter().take(2).cloned().collect();
        let err = p.commit_labels(&un[..1], &masks(&un[1..])).unwrap_err();
        assert!(matches!(err, PoolError::MaskId { .. }));
    }

    #[test]
    fn json_round_trip() {
        let mut p = PoolState::init(ids(10), 3, 2, 100, 1).unwrap();
        let pick: Vec<SampleId> = p.unlabeled_ids.iter().take(2).cloned().collect();
        p.mark_pending(&pick).unwrap();
        assert_eq!(PoolState::from_json(&p.to_json()).unwrap(), p);
    }

    proptest! {
        #[test]
        fn oracle_cycles_match_closed_form(
            n in 1usize..40, init_frac in 0.0f64..1.0, k in 1usize..6,
            cycles in 0usize..12, budget in 0usize..40, seed in 0u64..1000,
        ) {
            let initial = ((n as f64) * init_frac) as usize;
            let mut p = PoolState::init(ids(n), initial, k, budget, seed).unwrap();
            let initial_unlabeled = p.unlabeled_ids.len();
            let conserved = p.total_ids;
            for _ in 0..cycles {
                let cap = p.next_cycle_capacity();
                if cap == 0 { break; }
                let before = p.labeled_ids.clone();
                let pick: Vec<SampleId> = p.unlabeled_ids.iter().take(cap).cloned().collect();
                p.commit_labels(&pick, &masks(&pick)).unwrap();
                p.check_invariants().unwrap();
                prop_assert!(before.is_subset(&p.labeled_ids));
                prop_assert_eq!(p.labeled_ids.len() + p.unlabeled_ids.len() + p.pending.len(), conserved);
            }
            prop_assert_eq!(
                p.labeled_ids.len(),
                closed_form_labeled(initial, initial_unlabeled, cycles, k, budget)
            );
            prop_assert!(p.consumed <= budget);
        }
    }
}
