//! Fixtures shared by the benchmarks.

use stragglersim_core::{AlgoConfig, Algorithm, ExperimentConfig};

/// Default task with a short budget, for per-algorithm throughput.
pub fn bench_config(algorithm: Algorithm, budget: u64) -> ExperimentConfig {
    let mut algo = AlgoConfig::defaults(algorithm);
    if algorithm == Algorithm::FedAvg {
        algo.cohort_over = algo.cohort;
    }
    let mut cfg = ExperimentConfig::new(algo);
    cfg.budget = budget;
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn configs_validate() {
        for a in [Algorithm::FedAvg, Algorithm::FedAdam, Algorithm::FedBuff, Algorithm::FareDust, Algorithm::Feast] {
            bench_config(a, 100).validate().unwrap();
        }
    }
}
