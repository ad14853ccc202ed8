//! Buffered asynchronous aggregation.
//!
//! Up to `max_concurrency` clients train at once, each on the model that was
//! current when it was dispatched. Completed deltas enter a buffer unscaled;
//! every `buffer_size` entries the buffer is applied as one server step.
//! Free slots are refilled once per instant.

use std::sync::Arc;

use super::server::{Ema, ServerState};
use super::{AlgoConfig, Algorithm, ClientUpdate};
use crate::engine::{DispatchRequest, RunOptions, Sim, Strategy, StrategyTrace};
use crate::error::{Result, SimError};
use crate::metrics::WhichModel;
use crate::params::ParamVector;

pub struct FedBuffStrategy {
    cfg: AlgoConfig,
    server: ServerState,
    ema: Option<Ema>,
    buffer: ParamVector,
    buffered: usize,
    /// Dispatch-batch counter; doubles as the round id for random streams.
    batch: u64,
    budget: u64,
    stop: bool,
    options: RunOptions,
    trace: StrategyTrace,
}

impl FedBuffStrategy {
    pub fn new(cfg: &AlgoConfig, w0: ParamVector, budget: u64, options: RunOptions) -> Result<Self> {
        cfg.validate()?;
        if cfg.algorithm != Algorithm::FedBuff {
            return Err(SimError::Config("FedBuffStrategy requires algorithm fedbuff".into()));
        }
        let mut trace = StrategyTrace::default();
        if options.record_trajectory {
            trace.w_trajectory.push(w0.clone());
        }
        Ok(Self {
            cfg: cfg.clone(),
            buffer: ParamVector::zeros(w0.len()),
            server: ServerState::new(w0, cfg.server_optimizer),
            ema: cfg.beta.map(Ema::new).transpose()?,
            buffered: 0,
            batch: 0,
            budget,
            stop: false,
            options,
            trace,
        })
    }

    fn refill(&mut self, sim: &mut Sim<'_>) -> Result<()> {
        if self.stop {
            return Ok(());
        }
        let free = self.cfg.max_concurrency.saturating_sub(sim.n_active());
        if free == 0 {
            return Ok(());
        }
        let picked = sim.sample_clients(self.batch, free);
        if picked.is_empty() {
            return Ok(());
        }
        let w = Arc::new(self.server.w.clone());
        let teacher = (self.cfg.rho > 0.0).then(|| Arc::clone(&w));
        let requests = picked
            .into_iter()
            .map(|shard| DispatchRequest {
                shard,
                round_id: self.batch,
                w_start: Arc::clone(&w),
                teacher: teacher.clone(),
                model_version: self.server.t,
            })
            .collect();
        sim.dispatch(requests)?;
        self.batch += 1;
        Ok(())
    }
}

impl Strategy for FedBuffStrategy {
    fn start(&mut self, sim: &mut Sim<'_>) -> Result<()> {
        self.refill(sim)
    }

    fn on_completion(&mut self, sim: &mut Sim<'_>, update: ClientUpdate) -> Result<()> {
        if self.stop {
            return Ok(());
        }
        if update.model_version > self.server.t {
            return Err(SimError::Config("update computed on a future model".into()));
        }
        let staleness = self.server.t - update.model_version;
        sim.counters.max_staleness = sim.counters.max_staleness.max(staleness);
        self.buffer.add_assign(&update.delta);
        self.buffered += 1;
        if self.buffered == self.cfg.buffer_size {
            self.server.apply(&self.buffer, self.buffered, self.cfg.eta_g)?;
            sim.counters.server_steps += 1;
            sim.counters.aggregated_updates += self.buffered as u64;
            self.buffer = ParamVector::zeros(self.buffer.len());
            self.buffered = 0;
            if let Some(ema) = &mut self.ema {
                ema.update(&self.server.w);
            }
            if self.options.record_trajectory {
                self.trace.w_trajectory.push(self.server.w.clone());
            }
            sim.mark_progress();
            if sim.counters.aggregated_updates >= self.budget {
                self.stop = true;
            }
            let (model, which) = self.output();
            let model = model.clone();
            sim.on_server_step(&model, which)?;
        }
        Ok(())
    }

    fn after_instant(&mut self, sim: &mut Sim<'_>) -> Result<()> {
        self.refill(sim)
    }

    fn finished(&self) -> bool {
        self.stop
    }

    fn output(&self) -> (&ParamVector, WhichModel) {
        match &self.ema {
            Some(Ema { value: Some(v), .. }) => (v, WhichModel::Ema),
            Some(_) => (&self.server.w, WhichModel::Ema),
            None => (&self.server.w, WhichModel::Global),
        }
    }

    fn global(&self) -> &ParamVector {
        &self.server.w
    }

    fn into_trace(self: Box<Self>) -> StrategyTrace {
        self.trace
    }
}
