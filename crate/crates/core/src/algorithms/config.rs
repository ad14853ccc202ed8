use serde::{Deserialize, Serialize};

use super::server::ServerOptimizer;
use crate::error::{invalid, Result, SimError};
use crate::model::LocalWork;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[serde(rename = "fedavg")]
    FedAvg,
    #[serde(rename = "fedadam")]
    FedAdam,
    #[serde(rename = "fedbuff")]
    FedBuff,
    FareDust,
    Feast,
}

impl Algorithm {
    pub fn is_synchronous(self) -> bool {
        !matches!(self, Algorithm::FedBuff)
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::FedAvg => "fedavg",
            Algorithm::FedAdam => "fedadam",
            Algorithm::FedBuff => "fedbuff",
            Algorithm::FareDust => "fare_dust",
            Algorithm::Feast => "feast",
        }
    }
}

/// Fully resolved algorithm settings.
///
/// Deserialized through [`RawAlgoConfig`], where every field except
/// `algorithm` is optional and falls back to a per-algorithm default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAlgoConfig")]
pub struct AlgoConfig {
    pub algorithm: Algorithm,
    pub eta_l: f64,
    pub eta_g: f64,
    /// Auxiliary-model rate; only read by FeAST.
    pub eta_a: f64,
    /// Number of updates aggregated per synchronous round (B).
    pub cohort: usize,
    /// Number of clients sampled per synchronous round (B_t >= B).
    pub cohort_over: usize,
    pub buffer_size: usize,
    pub max_concurrency: usize,
    /// Size of the FARe-DUST delta history (k).
    pub teachers: usize,
    pub rho: f64,
    pub nu: f64,
    /// EMA decay. Required for FARe-DUST and FeAST; optional post-processing
    /// for the others.
    pub beta: Option<f64>,
    pub tau_max: f64,
    pub time_limit: bool,
    /// Explicit compute limit in seconds; `None` derives it from the
    /// population when `time_limit` is set.
    pub time_limit_s: Option<f64>,
    pub server_optimizer: ServerOptimizer,
    pub batch_size: usize,
    pub local_work: LocalWork,
    pub strict_sequential: bool,
    pub exclusive_clients: bool,
    /// With an empty history, distill against the current model instead of
    /// switching distillation off.
    pub self_distill_when_empty: bool,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawAlgoConfig {
    pub algorithm: Option<Algorithm>,
    pub eta_l: Option<f64>,
    pub eta_g: Option<f64>,
    pub eta_a: Option<f64>,
    pub kappa: Option<f64>,
    pub cohort: Option<usize>,
    pub cohort_over: Option<usize>,
    pub buffer_size: Option<usize>,
    pub max_concurrency: Option<usize>,
    pub teachers: Option<usize>,
    pub rho: Option<f64>,
    pub nu: Option<f64>,
    pub beta: Option<f64>,
    pub tau_max: Option<f64>,
    pub time_limit: Option<bool>,
    pub time_limit_s: Option<f64>,
    pub server_optimizer: Option<ServerOptimizer>,
    pub batch_size: Option<usize>,
    pub local_work: Option<LocalWork>,
    pub strict_sequential: Option<bool>,
    pub exclusive_clients: Option<bool>,
    pub self_distill_when_empty: Option<bool>,
}

impl TryFrom<RawAlgoConfig> for AlgoConfig {
    type Error = SimError;

    fn try_from(raw: RawAlgoConfig) -> Result<Self> {
        let algorithm = raw
            .algorithm
            .ok_or_else(|| SimError::Config("algo.algorithm is required".into()))?;
        let mut cfg = AlgoConfig::defaults(algorithm);
        if let Some(v) = raw.eta_l {
            cfg.eta_l = v;
        }
        if let Some(v) = raw.eta_g {
            cfg.eta_g = v;
        }
        match (raw.eta_a, raw.kappa) {
            (Some(_), Some(_)) => {
                return Err(SimError::Config("set at most one of algo.eta_a and algo.kappa".into()))
            }
            (Some(a), None) => cfg.eta_a = a,
            (None, Some(k)) => {
                if !(0.0..=1.0).contains(&k) {
                    return Err(invalid("kappa", format!("{k} not in [0, 1]")));
                }
                cfg.eta_a = k * cfg.eta_g;
            }
            (None, None) => cfg.eta_a = FEAST_KAPPA * cfg.eta_g,
        }
        if let Some(b) = raw.cohort {
            cfg.cohort = b;
            cfg.cohort_over = over_selected(b);
        }
        if let Some(v) = raw.cohort_over {
            cfg.cohort_over = v;
        }
        if let Some(v) = raw.buffer_size {
            cfg.buffer_size = v;
        }
        if let Some(v) = raw.max_concurrency {
            cfg.max_concurrency = v;
        }
        if let Some(v) = raw.teachers {
            cfg.teachers = v;
        }
        if let Some(v) = raw.rho {
            cfg.rho = v;
        }
        if let Some(v) = raw.nu {
            cfg.nu = v;
        }
        if raw.beta.is_some() {
            cfg.beta = raw.beta;
        }
        if let Some(v) = raw.tau_max {
            cfg.tau_max = v;
        }
        if let Some(v) = raw.time_limit {
            cfg.time_limit = v;
        }
        cfg.time_limit_s = raw.time_limit_s;
        if let Some(v) = raw.server_optimizer {
            cfg.server_optimizer = v;
        }
        if let Some(v) = raw.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = raw.local_work {
            cfg.local_work = v;
        }
        if let Some(v) = raw.strict_sequential {
            cfg.strict_sequential = v;
        }
        if let Some(v) = raw.exclusive_clients {
            cfg.exclusive_clients = v;
        }
        if let Some(v) = raw.self_distill_when_empty {
            cfg.self_distill_when_empty = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

const FEAST_KAPPA: f64 = 0.9;

/// Default over-selection: 20% extra clients, rounded up.
pub fn over_selected(cohort: usize) -> usize {
    (cohort * 6).div_ceil(5)
}

impl AlgoConfig {
    /// Defaults for each algorithm, taken from the tuned values for the
    /// handwritten-character task under the per-domain latency scenario.
    pub fn defaults(algorithm: Algorithm) -> Self {
        let base = AlgoConfig {
            algorithm,
            eta_l: 0.1,
            eta_g: 1.0,
            eta_a: 0.0,
            cohort: 50,
            cohort_over: over_selected(50),
            buffer_size: 20,
            max_concurrency: 200,
            teachers: 50,
            rho: 0.0,
            nu: 0.0,
            beta: None,
            tau_max: 100_000.0,
            time_limit: false,
            time_limit_s: None,
            server_optimizer: ServerOptimizer::Sgd,
            batch_size: 20,
            local_work: LocalWork::Epochs(1),
            strict_sequential: false,
            exclusive_clients: true,
            self_distill_when_empty: true,
        };
        match algorithm {
            Algorithm::FedAvg => base,
            Algorithm::FedAdam => AlgoConfig {
                eta_l: 0.03,
                eta_g: 0.003,
                server_optimizer: ServerOptimizer::adam_default(),
                ..base
            },
            Algorithm::FedBuff => AlgoConfig {
                eta_l: 0.01,
                eta_g: 1.0,
                ..base
            },
            Algorithm::FareDust => AlgoConfig {
                eta_l: 0.03,
                eta_g: 0.003,
                server_optimizer: ServerOptimizer::adam_default(),
                teachers: 50,
                beta: Some(0.99),
                rho: 0.1,
                ..base
            },
            Algorithm::Feast => AlgoConfig {
                eta_g: 0.006,
                eta_a: FEAST_KAPPA * 0.006,
                beta: Some(0.99),
                ..base
            },
        }
    }

    /// Number of aggregated client updates per server step.
    pub fn updates_per_step(&self) -> usize {
        if self.algorithm.is_synchronous() {
            self.cohort
        } else {
            self.buffer_size
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |name: &'static str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(invalid(name, format!("{v} must be finite and >= 0")))
            }
        };
        finite_nonneg("eta_g", self.eta_g)?;
        finite_nonneg("eta_a", self.eta_a)?;
        finite_nonneg("rho", self.rho)?;
        finite_nonneg("nu", self.nu)?;
        if !(self.eta_l.is_finite() && self.eta_l > 0.0) {
            return Err(invalid("eta_l", "must be finite and > 0"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be >= 1"));
        }
        if matches!(self.local_work, LocalWork::Epochs(0) | LocalWork::Steps(0)) {
            return Err(invalid("local_work", "must be >= 1"));
        }
        if !(self.tau_max >= 0.0) {
            return Err(invalid("tau_max", "must be >= 0"));
        }
        if let Some(beta) = self.beta {
            if !(0.0..1.0).contains(&beta) {
                return Err(invalid("beta", format!("{beta} not in [0, 1)")));
            }
        }
        if let Some(limit) = self.time_limit_s {
            if !(limit.is_finite() && limit > 0.0) {
                return Err(invalid("time_limit_s", "must be finite and > 0"));
            }
        }
        self.server_optimizer.validate()?;
        match self.algorithm {
            Algorithm::FedBuff => {
                if self.buffer_size == 0 {
                    return Err(invalid("buffer_size", "must be >= 1"));
                }
                if self.max_concurrency < self.buffer_size {
                    return Err(invalid("max_concurrency", "must be >= buffer_size"));
                }
            }
            _ => {
                if self.cohort == 0 {
                    return Err(invalid("cohort", "must be >= 1"));
                }
                if self.cohort_over < self.cohort {
                    return Err(invalid("cohort_over", "must be >= cohort"));
                }
            }
        }
        match self.algorithm {
            Algorithm::FareDust => {
                if self.teachers == 0 {
                    return Err(invalid("teachers", "must be >= 1"));
                }
                if self.beta.is_none() {
                    return Err(invalid("beta", "required for fare_dust"));
                }
            }
            Algorithm::Feast => {
                if self.beta.is_none() {
                    return Err(invalid("beta", "required for feast"));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_tuning_tables() {
        let avg: AlgoConfig = serde_json::from_str(r#"{"algorithm":"fedavg"}"#).unwrap();
        assert_eq!((avg.eta_l, avg.eta_g, avg.cohort, avg.cohort_over), (0.1, 1.0, 50, 60));
        assert_eq!(avg.batch_size, 20);
        let buff: AlgoConfig = serde_json::from_str(r#"{"algorithm":"fedbuff"}"#).unwrap();
        assert_eq!((buff.eta_l, buff.buffer_size, buff.max_concurrency), (0.01, 20, 200));
        let feast: AlgoConfig = serde_json::from_str(r#"{"algorithm":"feast"}"#).unwrap();
        assert_eq!(feast.eta_g, 0.006);
        assert!((feast.eta_a - 0.0054).abs() < 1e-15);
        assert_eq!(feast.tau_max, 100_000.0);
        assert_eq!(feast.server_optimizer, ServerOptimizer::Sgd);
        let fd: AlgoConfig = serde_json::from_str(r#"{"algorithm":"fare_dust"}"#).unwrap();
        assert_eq!((fd.teachers, fd.beta, fd.rho), (50, Some(0.99), 0.1));
        assert!(matches!(fd.server_optimizer, ServerOptimizer::Adam { .. }));
    }

    #[test]
    fn over_selection_follows_cohort() {
        assert_eq!(over_selected(50), 60);
        assert_eq!(over_selected(20), 24);
        assert_eq!(over_selected(100), 120);
        let c: AlgoConfig = serde_json::from_str(r#"{"algorithm":"fedavg","cohort":10}"#).unwrap();
        assert_eq!(c.cohort_over, 12);
        let c: AlgoConfig =
            serde_json::from_str(r#"{"algorithm":"fedavg","cohort":10,"cohort_over":10}"#).unwrap();
        assert_eq!(c.cohort_over, 10);
    }

    #[test]
    fn kappa_scales_server_rate() {
        let c: AlgoConfig =
            serde_json::from_str(r#"{"algorithm":"feast","eta_g":0.5,"kappa":0.2}"#).unwrap();
        assert!((c.eta_a - 0.1).abs() < 1e-15);
        assert!(serde_json::from_str::<AlgoConfig>(r#"{"algorithm":"feast","eta_a":1,"kappa":1}"#).is_err());
    }

    #[test]
    fn invalid_settings_rejected() {
        for bad in [
            r#"{}"#,
            r#"{"algorithm":"fedavg","cohort":10,"cohort_over":5}"#,
            r#"{"algorithm":"fedbuff","buffer_size":10,"max_concurrency":5}"#,
            r#"{"algorithm":"fedavg","beta":1.0}"#,
            r#"{"algorithm":"fedavg","unknown":1}"#,
            r#"{"algorithm":"fedavg","eta_l":0}"#,
        ] {
            assert!(serde_json::from_str::<AlgoConfig>(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn json_round_trip() {
        for alg in ["fedavg", "fedadam", "fedbuff", "fare_dust", "feast"] {
            let c: AlgoConfig = serde_json::from_str(&format!(r#"{{"algorithm":"{alg}"}}"#)).unwrap();
            let back: AlgoConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
            assert_eq!(c, back);
        }
    }
}
