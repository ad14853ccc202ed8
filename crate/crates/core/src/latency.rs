//! Monte Carlo client latency model.
//!
//! A client's round time is `comm + overhead + per_example * n_examples`,
//! with each factor drawn from a log-normal distribution whose parameters
//! depend on whether the client belongs to the straggler group.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::FederatedDataset;
use crate::error::{invalid, Result, SimError};
use crate::rng::{Purpose, Streams};

/// Location/scale of a log-normal variable, in log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LognormalParams {
    pub mu: f64,
    pub sigma: f64,
}

impl LognormalParams {
    pub const fn new(mu: f64, sigma: f64) -> Self {
        Self { mu, sigma }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() {
            return Err(invalid("mu", format!("must be finite, got {}", self.mu)));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(invalid("sigma", format!("must be finite and >= 0, got {}", self.sigma)));
        }
        Ok(())
    }

    pub fn median(&self) -> f64 {
        self.mu.exp()
    }

    pub fn mean(&self) -> f64 {
        (self.mu + 0.5 * self.sigma * self.sigma).exp()
    }
}

/// Draws `exp(mu + sigma * Z)` with `Z ~ N(0, 1)`.
///
/// One standard normal is consumed even when `sigma == 0`, so degenerate
/// profiles keep the same stream alignment as random ones.
pub fn sample_lognormal<R: Rng + ?Sized>(params: LognormalParams, rng: &mut R) -> Result<f64> {
    params.validate()?;
    let z: f64 = rng.sample(StandardNormal);
    Ok((params.mu + params.sigma * z).exp())
}

/// Parameters of the three latency factors for one client group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyProfile {
    /// Combined download + upload time, seconds.
    pub comm: LognormalParams,
    /// Seconds per processed example.
    pub per_example: LognormalParams,
    /// Fixed start-up/tear-down cost, seconds.
    pub overhead: LognormalParams,
}

impl LatencyProfile {
    /// Standard-client parameters of the per-example scenario.
    pub const PE_STANDARD: Self = Self {
        comm: LognormalParams::new(2.7, 1.0),
        per_example: LognormalParams::new(-1.6, 0.5),
        overhead: LognormalParams::new(3.0, 0.3),
    };

    /// Standard-client parameters of the per-domain scenario.
    pub const PDPE_STANDARD: Self = Self {
        comm: LognormalParams::new(2.7, 1.0),
        per_example: LognormalParams::new(-2.0, 0.2),
        overhead: LognormalParams::new(3.0, 0.3),
    };

    /// Straggler-client parameters of the per-domain scenario.
    pub const PDPE_STRAGGLER: Self = Self {
        comm: LognormalParams::new(3.7, 1.0),
        per_example: LognormalParams::new(-1.0, 0.5),
        overhead: LognormalParams::new(3.5, 0.3),
    };

    /// All three factors fixed at `e^mu` (sigma = 0).
    pub fn deterministic(comm_s: f64, per_example_s: f64, overhead_s: f64) -> Self {
        Self {
            comm: LognormalParams::new(comm_s.ln(), 0.0),
            per_example: LognormalParams::new(per_example_s.ln(), 0.0),
            overhead: LognormalParams::new(overhead_s.ln(), 0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.comm.validate()?;
        self.per_example.validate()?;
        self.overhead.validate()
    }

    /// Draws the three factors in the fixed order comm, per-example, overhead.
    pub fn sample_factors<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<LatencyFactors> {
        Ok(LatencyFactors {
            comm_s: sample_lognormal(self.comm, rng)?,
            per_example_s: sample_lognormal(self.per_example, rng)?,
            overhead_s: sample_lognormal(self.overhead, rng)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LatencyMode {
    /// Slowness scales only with example count; one profile for everyone.
    #[serde(rename = "pe")]
    PerExample,
    /// Straggler clients additionally use a slower profile.
    #[serde(rename = "pdpe")]
    PerDomainPerExample,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    mode: LatencyMode,
    standard: LatencyProfile,
    #[serde(default)]
    straggler: Option<LatencyProfile>,
    #[serde(default = "one")]
    teacher_download_factor: f64,
}

fn one() -> f64 {
    1.0
}

/// Latency model for a whole client population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScenario")]
pub struct LatencyScenario {
    pub mode: LatencyMode,
    pub standard: LatencyProfile,
    pub straggler: LatencyProfile,
    /// Multiplier on the communication term for clients that also download a
    /// teacher model. 1.0 means no surcharge.
    pub teacher_download_factor: f64,
}

impl TryFrom<RawScenario> for LatencyScenario {
    type Error = SimError;

    fn try_from(raw: RawScenario) -> Result<Self> {
        let straggler = match (raw.mode, raw.straggler) {
            (LatencyMode::PerExample, None) => raw.standard,
            (LatencyMode::PerExample, Some(p)) if p == raw.standard => p,
            (LatencyMode::PerExample, Some(_)) => {
                return Err(SimError::Config(
                    "latency mode `pe` requires identical standard and straggler profiles".into(),
                ))
            }
            (LatencyMode::PerDomainPerExample, Some(p)) => p,
            (LatencyMode::PerDomainPerExample, None) => {
                return Err(SimError::Config("latency mode `pdpe` requires a `straggler` profile".into()))
            }
        };
        let scenario = Self {
            mode: raw.mode,
            standard: raw.standard,
            straggler,
            teacher_download_factor: raw.teacher_download_factor,
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

impl Default for LatencyScenario {
    fn default() -> Self {
        Self::per_domain_per_example()
    }
}

impl LatencyScenario {
    pub fn per_example() -> Self {
        Self::uniform(LatencyProfile::PE_STANDARD)
    }

    pub fn per_domain_per_example() -> Self {
        Self {
            mode: LatencyMode::PerDomainPerExample,
            standard: LatencyProfile::PDPE_STANDARD,
            straggler: LatencyProfile::PDPE_STRAGGLER,
            teacher_download_factor: 1.0,
        }
    }

    /// Per-example scenario where every client shares `profile`.
    pub fn uniform(profile: LatencyProfile) -> Self {
        Self {
            mode: LatencyMode::PerExample,
            standard: profile,
            straggler: profile,
            teacher_download_factor: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.standard.validate()?;
        self.straggler.validate()?;
        if self.mode == LatencyMode::PerExample && self.standard != self.straggler {
            return Err(SimError::Config("per-example scenario with differing profiles".into()));
        }
        if !(self.teacher_download_factor >= 1.0) || !self.teacher_download_factor.is_finite() {
            return Err(invalid("teacher_download_factor", "must be finite and >= 1"));
        }
        Ok(())
    }

    pub fn profile(&self, is_straggler: bool) -> &LatencyProfile {
        if is_straggler {
            &self.straggler
        } else {
            &self.standard
        }
    }
}

/// Raw per-round factor draws before the example count is known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyFactors {
    pub comm_s: f64,
    pub per_example_s: f64,
    pub overhead_s: f64,
}

impl LatencyFactors {
    pub fn compose(&self, n_examples: usize) -> LatencySample {
        LatencySample {
            comm_s: self.comm_s,
            per_example_s: self.per_example_s,
            overhead_s: self.overhead_s,
            total_s: self.comm_s + self.overhead_s + self.per_example_s * n_examples as f64,
            n_examples,
        }
    }

    /// On-device compute time for `n_examples`.
    pub fn compute_s(&self, n_examples: usize) -> f64 {
        self.overhead_s + self.per_example_s * n_examples as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencySample {
    pub comm_s: f64,
    pub per_example_s: f64,
    pub overhead_s: f64,
    pub total_s: f64,
    pub n_examples: usize,
}

/// Draws one round's latency for a client of the given group.
pub fn sample_client_latency<R: Rng + ?Sized>(
    scenario: &LatencyScenario,
    is_straggler: bool,
    n_examples: usize,
    rng: &mut R,
) -> Result<LatencySample> {
    Ok(scenario.profile(is_straggler).sample_factors(rng)?.compose(n_examples))
}

/// Nearest-rank percentile of an ascending slice: the smallest value such that
/// at least `p` percent of the data is `<=` it.
pub fn nearest_rank(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(SimError::Empty("percentile input"));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(invalid("percentile", format!("{p} not in [0, 100]")));
    }
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, n) - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PercentileRow {
    pub group: String,
    pub samples: usize,
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
}

/// Percentile summary of total client latencies, one row per group
/// (`standard`, `straggler`, `all`); groups without clients are omitted.
///
/// Each draw epoch samples one full-shard latency per client using the
/// [`Purpose::LatencyReport`] stream of `(client, epoch)`.
pub fn latency_percentiles(
    scenario: &LatencyScenario,
    population: &FederatedDataset,
    streams: &Streams,
    n_draws: usize,
) -> Result<Vec<PercentileRow>> {
    if population.shards.is_empty() {
        return Err(SimError::Empty("client population"));
    }
    if n_draws == 0 {
        return Err(invalid("n_draws", "must be >= 1"));
    }
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for epoch in 0..n_draws as u64 {
        for shard in &population.shards {
            let mut rng = streams.stream(Purpose::LatencyReport, shard.client_id as u64, epoch);
            let sample = sample_client_latency(scenario, shard.is_straggler, shard.examples.len(), &mut rng)?;
            let name = if shard.is_straggler { "straggler" } else { "standard" };
            groups.entry(name).or_default().push(sample.total_s);
            groups.entry("all").or_default().push(sample.total_s);
        }
    }
    let order = ["standard", "straggler", "all"];
    let mut rows = Vec::new();
    for name in order {
        if let Some(values) = groups.get_mut(name) {
            values.sort_by(f64::total_cmp);
            rows.push(PercentileRow {
                group: name.to_string(),
                samples: values.len(),
                p50: nearest_rank(values, 50.0)?,
                p95: nearest_rank(values, 95.0)?,
                p99: nearest_rank(values, 99.0)?,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn degenerate_sigma_returns_median_exactly() {
        let v = sample_lognormal(LognormalParams::new(2.7, 0.0), &mut rng(1)).unwrap();
        assert_eq!(v, 2.7f64.exp());
        assert!((v - 14.879_731_724_872_837).abs() < 1e-12);
    }

    #[test]
    fn negative_sigma_is_rejected() {
        let err = sample_lognormal(LognormalParams::new(0.0, -0.1), &mut rng(1)).unwrap_err();
        assert!(matches!(err, SimError::InvalidParameter { name: "sigma", .. }));
    }

    #[test]
    fn zero_examples_total_is_comm_plus_overhead() {
        let s = sample_client_latency(&LatencyScenario::per_domain_per_example(), true, 0, &mut rng(3)).unwrap();
        assert_eq!(s.total_s, s.comm_s + s.overhead_s);
    }

    #[test]
    fn composition_is_exact() {
        let scenario = LatencyScenario::per_example();
        let mut r = rng(5);
        for n in [0usize, 1, 17, 300] {
            let s = sample_client_latency(&scenario, false, n, &mut r).unwrap();
            assert_eq!(s.total_s, s.comm_s + s.overhead_s + s.per_example_s * n as f64);
            assert!(s.comm_s > 0.0 && s.per_example_s > 0.0 && s.overhead_s > 0.0);
        }
    }

    #[test]
    fn nearest_rank_brute_force() {
        let data = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(nearest_rank(&data, 50.0).unwrap(), 2.0);
        assert_eq!(nearest_rank(&data, 0.0).unwrap(), 1.0);
        assert_eq!(nearest_rank(&data, 75.0).unwrap(), 3.0);
        assert_eq!(nearest_rank(&data, 76.0).unwrap(), 4.0);
        assert_eq!(nearest_rank(&data, 100.0).unwrap(), 4.0);
        // Definition: smallest x in data with #{v <= x} >= p/100 * n.
        let values: Vec<f64> = (1..=37).map(|v| v as f64 * 1.5).collect();
        for p in 0..=100 {
            let p = p as f64;
            let oracle = values
                .iter()
                .copied()
                .find(|&x| values.iter().filter(|&&v| v <= x).count() as f64 >= p / 100.0 * values.len() as f64)
                .unwrap();
            assert_eq!(nearest_rank(&values, p).unwrap(), oracle, "p={p}");
        }
        assert!(nearest_rank(&[], 50.0).is_err());
    }

    #[test]
    fn pe_scenario_rejects_distinct_straggler_profile() {
        let json = r#"{"mode":"pe","standard":{"comm":{"mu":1,"sigma":0},"per_example":{"mu":1,"sigma":0},"overhead":{"mu":1,"sigma":0}},
                       "straggler":{"comm":{"mu":2,"sigma":0},"per_example":{"mu":1,"sigma":0},"overhead":{"mu":1,"sigma":0}}}"#;
        assert!(serde_json::from_str::<LatencyScenario>(json).is_err());
        let json = r#"{"mode":"pdpe","standard":{"comm":{"mu":1,"sigma":0},"per_example":{"mu":1,"sigma":0},"overhead":{"mu":1,"sigma":0}}}"#;
        assert!(serde_json::from_str::<LatencyScenario>(json).is_err());
    }

    #[test]
    fn scenario_json_round_trip() {
        let s = LatencyScenario::per_domain_per_example();
        let back: LatencyScenario = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(s, back);
    }
}
