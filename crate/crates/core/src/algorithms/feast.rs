//! Auxiliary-model bookkeeping for FeAST-on-MSG.
//!
//! Each round keeps accumulating straggler deltas after the fast clients have
//! advanced the global model. When the round's window closes the combined
//! delta is applied to the round's starting model and folded into the
//! auxiliary EMA. Rounds are finalized strictly in order.

use std::collections::BTreeMap;

use crate::error::{invalid, Result, SimError};
use crate::params::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeastParams {
    pub eta_g: f64,
    pub eta_a: f64,
    pub beta: f64,
}

/// One auxiliary step.
///
/// `w_plus = w_t - (eta_g / count) * delta_plus` and
/// `a' = beta * (a - (eta_a / count) * delta_plus) + (1 - beta) * w_plus`.
/// Returns `(a', w_plus)`.
pub fn feast_aux_update(
    a: &ParamVector,
    w_t: &ParamVector,
    delta_plus: &ParamVector,
    count: usize,
    params: &FeastParams,
) -> Result<(ParamVector, ParamVector)> {
    if count == 0 {
        return Err(invalid("count", "auxiliary update needs at least one delta"));
    }
    if a.len() != w_t.len() || delta_plus.len() != w_t.len() {
        return Err(SimError::DimensionMismatch {
            context: "auxiliary update",
            expected: w_t.len(),
            actual: if a.len() != w_t.len() { a.len() } else { delta_plus.len() },
        });
    }
    let inv = 1.0 / count as f64;
    let beta = params.beta;
    let mut w_plus = w_t.clone();
    w_plus.axpy(-params.eta_g * inv, delta_plus);
    let mut next = a.clone();
    for ((ai, di), wi) in next.as_mut_slice().iter_mut().zip(delta_plus.iter()).zip(w_plus.iter()) {
        *ai = beta * (*ai - params.eta_a * inv * di) + (1.0 - beta) * wi;
    }
    if !next.is_finite() {
        return Err(SimError::NonFinite("auxiliary model".into()));
    }
    Ok((next, w_plus))
}

#[derive(Debug, Clone, PartialEq)]
struct PendingRound {
    w_start: ParamVector,
    fast_delta: ParamVector,
    slow_delta: ParamVector,
    fast_count: usize,
    slow_count: usize,
    cohort_size: usize,
    deadline: f64,
    fast_closed: bool,
    deadline_passed: bool,
}

impl PendingRound {
    fn reported(&self) -> usize {
        self.fast_count + self.slow_count
    }

    fn ready(&self) -> bool {
        self.fast_closed && (self.deadline_passed || self.reported() >= self.cohort_size)
    }
}

/// Everything needed to audit one finalized round.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalizedRound {
    pub round: u64,
    pub w_start: ParamVector,
    pub w_plus: ParamVector,
    /// Sum of the fast clients' deltas (the global step's input).
    pub fast_delta: ParamVector,
    pub fast_count: usize,
    /// Sum of straggler deltas that arrived inside the window.
    pub slow_delta: ParamVector,
    /// Total contributors, fast plus slow.
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeastState {
    pub a: ParamVector,
    pending: BTreeMap<u64, PendingRound>,
    next_round: u64,
    /// Straggler deltas that arrived after their round was finalized.
    pub discarded: u64,
}

impl FeastState {
    pub fn new(a0: ParamVector) -> Self {
        Self {
            a: a0,
            pending: BTreeMap::new(),
            next_round: 0,
            discarded: 0,
        }
    }

    /// Round whose auxiliary update must come next.
    pub fn next_round(&self) -> u64 {
        self.next_round
    }

    pub fn pending_rounds(&self) -> usize {
        self.pending.len()
    }

    pub fn open_round(&mut self, round: u64, w_start: ParamVector, cohort_size: usize, deadline: f64) -> Result<()> {
        if cohort_size == 0 {
            return Err(invalid("cohort_size", "must be >= 1"));
        }
        if round < self.next_round || self.pending.contains_key(&round) {
            return Err(SimError::Config(format!("round {round} opened twice")));
        }
        let d = w_start.len();
        self.pending.insert(
            round,
            PendingRound {
                w_start,
                fast_delta: ParamVector::zeros(d),
                slow_delta: ParamVector::zeros(d),
                fast_count: 0,
                slow_count: 0,
                cohort_size,
                deadline,
                fast_closed: false,
                deadline_passed: false,
            },
        );
        Ok(())
    }

    pub fn deadline(&self, round: u64) -> Option<f64> {
        self.pending.get(&round).map(|p| p.deadline)
    }

    /// Record a client delta. Fast deltas must arrive before `close_fast`.
    /// Returns `false` when a straggler's round has already been finalized.
    pub fn add_update(&mut self, round: u64, delta: &ParamVector, fast: bool) -> Result<bool> {
        let Some(p) = self.pending.get_mut(&round) else {
            if fast {
                return Err(SimError::Config(format!("fast update for unknown round {round}")));
            }
            self.discarded += 1;
            return Ok(false);
        };
        if p.reported() >= p.cohort_size {
            return Err(invalid("cohort_size", format!("round {round} received more updates than clients")));
        }
        if fast {
            if p.fast_closed {
                return Err(SimError::Config(format!("fast update after round {round} closed")));
            }
            p.fast_delta.add_assign(delta);
            p.fast_count += 1;
        } else {
            p.slow_delta.add_assign(delta);
            p.slow_count += 1;
        }
        Ok(true)
    }

    pub fn close_fast(&mut self, round: u64) -> Result<()> {
        let p = self
            .pending
            .get_mut(&round)
            .ok_or_else(|| SimError::Config(format!("close of unknown round {round}")))?;
        p.fast_closed = true;
        Ok(())
    }

    /// Mark the round's straggler window as expired. Finalized rounds are
    /// ignored.
    pub fn mark_deadline(&mut self, round: u64) {
        if let Some(p) = self.pending.get_mut(&round) {
            p.deadline_passed = true;
        }
    }

    pub fn is_ready(&self, round: u64) -> bool {
        self.pending.get(&round).is_some_and(PendingRound::ready)
    }

    /// Apply the auxiliary update for `round`, which must be the next round
    /// in order and ready.
    pub fn finalize(&mut self, round: u64, params: &FeastParams) -> Result<FinalizedRound> {
        if round != self.next_round {
            return Err(SimError::AuxOrdering {
                expected: self.next_round,
                got: round,
            });
        }
        if !self.is_ready(round) {
            return Err(SimError::Config(format!("round {round} finalized before its window closed")));
        }
        let p = self.pending.remove(&round).expect("checked above");
        let mut delta_plus = p.fast_delta.clone();
        delta_plus.add_assign(&p.slow_delta);
        let count = p.reported();
        let (a, w_plus) = feast_aux_update(&self.a, &p.w_start, &delta_plus, count, params)?;
        self.a = a;
        self.next_round += 1;
        Ok(FinalizedRound {
            round,
            w_start: p.w_start,
            w_plus,
            fast_delta: p.fast_delta,
            fast_count: p.fast_count,
            slow_delta: p.slow_delta,
            count,
        })
    }

    /// Finalize every ready round at the head of the queue.
    pub fn finalize_ready(&mut self, params: &FeastParams) -> Result<Vec<FinalizedRound>> {
        let mut done = Vec::new();
        while self.is_ready(self.next_round) {
            done.push(self.finalize(self.next_round, params)?);
        }
        Ok(done)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::from_vec(v.to_vec())
    }

    #[test]
    fn zero_aux_rate_is_pure_ema() {
        let params = FeastParams {
            eta_g: 0.5,
            eta_a: 0.0,
            beta: 0.8,
        };
        let a = pv(&[1.0, -1.0]);
        let w = pv(&[0.2, 0.4]);
        let d = pv(&[0.6, -0.2]);
        let (next, w_plus) = feast_aux_update(&a, &w, &d, 3, &params).unwrap();
        for i in 0..2 {
            assert_eq!(next[i], 0.8 * a[i] + (1.0 - 0.8) * w_plus[i]);
        }
    }

    #[test]
    fn hand_computed_single_round() {
        // B = 1 fast delta 0.4, one straggler delta 0.2, eta_g = eta_a = 1,
        // beta = 0.5, a_0 = w_0 = 1.
        // delta_plus = 0.6, B+ = 2: w_plus = 1 - 0.3 = 0.7,
        // a_1 = 0.5 * (1 - 0.3) + 0.5 * 0.7 = 0.7.
        let params = FeastParams {
            eta_g: 1.0,
            eta_a: 1.0,
            beta: 0.5,
        };
        let mut s = FeastState::new(pv(&[1.0]));
        s.open_round(0, pv(&[1.0]), 2, f64::INFINITY).unwrap();
        s.add_update(0, &pv(&[0.4]), true).unwrap();
        s.close_fast(0).unwrap();
        assert!(!s.is_ready(0));
        s.add_update(0, &pv(&[0.2]), false).unwrap();
        let done = s.finalize_ready(&params).unwrap();
        assert_eq!(done.len(), 1);
        assert!((done[0].w_plus[0] - 0.7).abs() < 1e-15);
        assert!((s.a[0] - 0.7).abs() < 1e-15);
        assert_eq!(done[0].count, 2);
    }

    #[test]
    fn rounds_finalize_in_order() {
        let params = FeastParams {
            eta_g: 1.0,
            eta_a: 1.0,
            beta: 0.5,
        };
        let mut s = FeastState::new(pv(&[0.0]));
        s.open_round(0, pv(&[0.0]), 2, 10.0).unwrap();
        s.add_update(0, &pv(&[1.0]), true).unwrap();
        s.close_fast(0).unwrap();
        s.open_round(1, pv(&[-0.5]), 1, 20.0).unwrap();
        s.add_update(1, &pv(&[1.0]), true).unwrap();
        s.close_fast(1).unwrap();
        assert!(s.is_ready(1));
        assert!(s.finalize_ready(&params).unwrap().is_empty());
        assert!(matches!(
            s.finalize(1, &params),
            Err(SimError::AuxOrdering { expected: 0, got: 1 })
        ));
        s.mark_deadline(0);
        let done = s.finalize_ready(&params).unwrap();
        assert_eq!(done.iter().map(|r| r.round).collect::<Vec<_>>(), vec![0, 1]);
        assert!(!s.add_update(0, &pv(&[1.0]), false).unwrap());
        assert_eq!(s.discarded, 1);
    }

    #[test]
    fn no_stragglers_keeps_aux_on_global() {
        let params = FeastParams {
            eta_g: 0.7,
            eta_a: 0.7,
            beta: 0.9,
        };
        let mut w = pv(&[0.3, -0.1]);
        let mut s = FeastState::new(w.clone());
        for t in 0..20u64 {
            let d = pv(&[(t as f64).sin(), (t as f64 * 0.3).cos()]);
            s.open_round(t, w.clone(), 1, f64::INFINITY).unwrap();
            s.add_update(t, &d, true).unwrap();
            s.close_fast(t).unwrap();
            w.axpy(-0.7, &d);
            s.finalize_ready(&params).unwrap();
            assert!(s.a.max_abs_diff(&w) <= 1e-12);
        }
    }
}
