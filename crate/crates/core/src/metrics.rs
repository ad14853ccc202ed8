//! Accuracy metrics and multi-trial summaries.

use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{Result, SimError};
use crate::model::{accuracy, Layout};
use crate::params::ParamVector;

/// Which model a record was computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WhichModel {
    Global,
    Ema,
    Aux,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub virtual_time_s: f64,
    pub server_step: u64,
    pub aggregated_updates: u64,
    pub total_acc: f64,
    /// `None` when the dataset has no straggler classes.
    pub straggler_acc: Option<f64>,
    pub which_model: WhichModel,
}

/// `(total accuracy, straggler accuracy)` on the two held-out splits.
pub fn evaluate(
    layout: &Layout,
    w: &ParamVector,
    eval_total: &[Example],
    eval_straggler: &[Example],
) -> Result<(f64, Option<f64>)> {
    let total = accuracy(layout, w, eval_total)?;
    let straggler = if eval_straggler.is_empty() {
        None
    } else {
        Some(accuracy(layout, w, eval_straggler)?)
    };
    Ok((total, straggler))
}

/// Linearly interpolated percentile of an ascending slice, matching the
/// default method of common numerical libraries: position `p/100 * (n-1)`.
pub fn percentile_linear(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(SimError::Empty("percentile input"));
    }
    let pos = (p / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

/// Median with a 90% (5th to 95th percentile) band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub median: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        let mut v = values.to_vec();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(SimError::NonFinite("trial values".into()));
        }
        v.sort_by(f64::total_cmp);
        Ok(Self {
            median: percentile_linear(&v, 50.0)?,
            lo: percentile_linear(&v, 5.0)?,
            hi: percentile_linear(&v, 95.0)?,
        })
    }

    pub fn overlaps(&self, other: &Interval) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }
}

/// Final values of one run, as consumed by [`summarize_trials`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialFinal {
    pub total_acc: f64,
    pub straggler_acc: Option<f64>,
    pub total_time_s: f64,
}

impl TrialFinal {
    /// Final record of a metrics log plus the run's total time.
    pub fn from_log(records: &[MetricsRecord], total_time_s: f64) -> Result<Self> {
        let last = records.last().ok_or(SimError::Empty("metrics log"))?;
        Ok(Self {
            total_acc: last.total_acc,
            straggler_acc: last.straggler_acc,
            total_time_s,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub n_trials: usize,
    pub total_acc: Interval,
    pub straggler_acc: Option<Interval>,
    pub total_time_s: Interval,
}

pub fn summarize_trials(runs: &[TrialFinal]) -> Result<TrialSummary> {
    if runs.is_empty() {
        return Err(SimError::Empty("trial list"));
    }
    let total: Vec<f64> = runs.iter().map(|r| r.total_acc).collect();
    let time: Vec<f64> = runs.iter().map(|r| r.total_time_s).collect();
    let straggler: Option<Vec<f64>> = runs.iter().map(|r| r.straggler_acc).collect();
    Ok(TrialSummary {
        n_trials: runs.len(),
        total_acc: Interval::from_values(&total)?,
        straggler_acc: straggler.map(|v| Interval::from_values(&v)).transpose()?,
        total_time_s: Interval::from_values(&time)?,
    })
}
