//! Deterministic discrete-event simulation of cross-device federated learning
//! with straggler clients.
//!
//! The crate covers the latency model, synthetic client data with
//! straggler-only classes, a small classifier with analytic gradients, the
//! aggregation algorithms (FedAvg, FedAdam, FedBuff, FARe-DUST, FeAST-on-MSG),
//! the event engine, metrics, and numerical checks of the auxiliary-model
//! convergence analysis.

pub mod algorithms;
pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod latency;
pub mod metrics;
pub mod model;
pub mod params;
pub mod rng;
pub mod verify;

pub use algorithms::{AlgoConfig, Algorithm, ClientUpdate, ServerOptimizer};
pub use config::{EvalConfig, ExperimentConfig};
pub use data::{DataConfig, FederatedDataset};
pub use engine::{run_experiment, run_on_dataset, RunOptions, RunOutput, RunSummary};
pub use error::{Result, SimError};
pub use latency::{LatencyProfile, LatencyScenario, LognormalParams};
pub use metrics::{MetricsRecord, TrialSummary, WhichModel};
pub use model::{Layout, ModelConfig};
pub use params::ParamVector;
pub use rng::{Purpose, Streams};
