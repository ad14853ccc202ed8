//! Server-side aggregation strategies.
//!
//! Sign convention: a client delta is `w_init - w_final`, so the server step
//! `w - (eta_g / count) * delta` moves in the descent direction.

mod config;
pub mod fare_dust;
pub mod feast;
pub mod fedbuff;
pub mod server;
pub mod sync;

pub use config::{AlgoConfig, Algorithm, RawAlgoConfig};
pub use fare_dust::{build_teacher, DeltaHistory, DeltaHistoryEntry};
pub use feast::{feast_aux_update, FeastParams, FeastState, FinalizedRound};
pub use server::{ema_update, Ema, ServerOptimizer, ServerState};

use serde::Serialize;

use crate::params::ParamVector;

/// Result of one client's local computation, as delivered to the server.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClientUpdate {
    pub round_id: u64,
    pub client_id: usize,
    pub delta: ParamVector,
    pub dispatched_at: f64,
    pub completed_at: f64,
    pub examples_processed: usize,
    pub steps: usize,
    /// Server step counter at dispatch.
    pub model_version: u64,
}
