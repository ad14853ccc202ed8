//! Stale-teacher bookkeeping: a bounded history of summed round deltas that
//! late client updates keep folding into.

use std::collections::VecDeque;

use rand::Rng;

use crate::error::{invalid, Result, SimError};
use crate::params::ParamVector;

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaHistoryEntry {
    pub origin_round: u64,
    pub summed_delta: ParamVector,
    pub contributor_count: usize,
}

/// The last `k` round deltas, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaHistory {
    k: usize,
    entries: VecDeque<DeltaHistoryEntry>,
    /// Late updates whose round had already been evicted.
    pub discarded: u64,
    /// Late updates folded into a stored entry.
    pub folded: u64,
}

impl DeltaHistory {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(invalid("teachers", "history size must be >= 1"));
        }
        Ok(Self {
            k,
            entries: VecDeque::with_capacity(k + 1),
            discarded: 0,
            folded: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &DeltaHistoryEntry> {
        self.entries.iter()
    }

    /// Record a closed round, evicting the oldest entry beyond `k`.
    pub fn push(&mut self, origin_round: u64, summed_delta: ParamVector, contributor_count: usize) -> Result<()> {
        if contributor_count == 0 {
            return Err(invalid("contributor_count", "must be >= 1"));
        }
        if let Some(last) = self.entries.back() {
            if origin_round <= last.origin_round {
                return Err(SimError::Config(format!(
                    "history rounds must increase: {origin_round} after {}",
                    last.origin_round
                )));
            }
        }
        self.entries.push_back(DeltaHistoryEntry {
            origin_round,
            summed_delta,
            contributor_count,
        });
        while self.entries.len() > self.k {
            self.entries.pop_front();
        }
        Ok(())
    }

    /// Add a late client delta to its round's entry. Returns `false` (and
    /// counts a discard) when the round is no longer stored.
    pub fn fold(&mut self, origin_round: u64, delta: &ParamVector) -> bool {
        match self.entries.iter_mut().find(|e| e.origin_round == origin_round) {
            Some(entry) => {
                entry.summed_delta.add_assign(delta);
                entry.contributor_count += 1;
                self.folded += 1;
                true
            }
            None => {
                self.discarded += 1;
                false
            }
        }
    }

    /// Uniformly chosen entry, or `None` for an empty history.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<&DeltaHistoryEntry> {
        if self.entries.is_empty() {
            None
        } else {
            self.entries.get(rng.random_range(0..self.entries.len()))
        }
    }
}

/// `w_t - (eta_g / b) * delta`: a stored delta applied to the current model.
pub fn build_teacher(w_t: &ParamVector, entry: &DeltaHistoryEntry, eta_g: f64) -> Result<ParamVector> {
    if entry.contributor_count == 0 {
        return Err(invalid("contributor_count", "must be >= 1"));
    }
    if entry.summed_delta.len() != w_t.len() {
        return Err(SimError::DimensionMismatch {
            context: "teacher delta",
            expected: w_t.len(),
            actual: entry.summed_delta.len(),
        });
    }
    let mut teacher = w_t.clone();
    teacher.axpy(-eta_g / entry.contributor_count as f64, &entry.summed_delta);
    Ok(teacher)
}
