//! Round-based driver shared by FedAvg, FedAdam, FARe-DUST and FeAST.
//!
//! Each round samples `cohort_over` clients and advances the global model as
//! soon as the `cohort` fastest have reported (ties broken by client id, which
//! is the dispatch order). What happens to the remaining reports depends on
//! the algorithm: dropped, folded into the delta history, or accumulated into
//! the round's straggler window.

use std::sync::Arc;

use log::trace;

use super::fare_dust::{build_teacher, DeltaHistory};
use super::feast::{FeastParams, FeastState};
use super::server::{Ema, ServerState};
use super::{AlgoConfig, Algorithm, ClientUpdate};
use crate::engine::{DispatchRequest, EventKind, RoundLog, RunOptions, Sim, Strategy, StrategyTrace};
use crate::error::{Result, SimError};
use crate::metrics::WhichModel;
use crate::params::ParamVector;
use crate::rng::Purpose;

/// Local steps that fit into a compute limit:
/// `max(1, floor(floor((limit - overhead) / per_example) / batch))`.
pub fn time_limited_steps(limit_s: f64, overhead_s: f64, per_example_s: f64, batch: usize) -> u32 {
    let budget = limit_s - overhead_s;
    if !(budget > 0.0) || !(per_example_s > 0.0) || batch == 0 {
        return 1;
    }
    let examples = (budget / per_example_s).floor();
    let steps = (examples / batch as f64).floor();
    if steps >= u32::MAX as f64 {
        u32::MAX
    } else {
        (steps as u32).max(1)
    }
}

enum Variant {
    Plain,
    FareDust(DeltaHistory),
    Feast(FeastState, FeastParams),
}

pub struct SyncStrategy {
    cfg: AlgoConfig,
    server: ServerState,
    ema: Option<Ema>,
    variant: Variant,
    budget: u64,
    round: u64,
    round_started: f64,
    fast_sum: ParamVector,
    fast_count: usize,
    cohort_size: usize,
    closed: bool,
    stop: bool,
    options: RunOptions,
    trace: StrategyTrace,
    current_log: Option<RoundLog>,
}

impl SyncStrategy {
    pub fn new(cfg: &AlgoConfig, w0: ParamVector, budget: u64, options: RunOptions) -> Result<Self> {
        cfg.validate()?;
        let variant = match cfg.algorithm {
            Algorithm::FedAvg | Algorithm::FedAdam => Variant::Plain,
            Algorithm::FareDust => Variant::FareDust(DeltaHistory::new(cfg.teachers)?),
            Algorithm::Feast => Variant::Feast(
                FeastState::new(w0.clone()),
                FeastParams {
                    eta_g: cfg.eta_g,
                    eta_a: cfg.eta_a,
                    beta: cfg.beta.expect("validated"),
                },
            ),
            Algorithm::FedBuff => {
                return Err(SimError::Config("fedbuff is not a synchronous algorithm".into()));
            }
        };
        let ema = match cfg.algorithm {
            Algorithm::Feast => None,
            _ => cfg.beta.map(Ema::new).transpose()?,
        };
        let mut trace = StrategyTrace::default();
        if options.record_trajectory {
            trace.w_trajectory.push(w0.clone());
            if matches!(variant, Variant::Feast(..)) {
                trace.aux_trajectory.push(w0.clone());
            }
        }
        let d = w0.len();
        Ok(Self {
            cfg: cfg.clone(),
            server: ServerState::new(w0, cfg.server_optimizer),
            ema,
            variant,
            budget,
            round: 0,
            round_started: 0.0,
            fast_sum: ParamVector::zeros(d),
            fast_count: 0,
            cohort_size: 0,
            closed: false,
            stop: false,
            options,
            trace,
            current_log: None,
        })
    }

    fn open_round(&mut self, sim: &mut Sim<'_>) -> Result<()> {
        let t = self.round;
        let cohort = sim.sample_clients(t, self.cfg.cohort_over);
        if cohort.len() < self.cfg.cohort {
            return Err(SimError::Config(format!(
                "round {t}: only {} idle clients for a cohort of {}",
                cohort.len(),
                self.cfg.cohort
            )));
        }
        let w = Arc::new(self.server.w.clone());
        let mut requests = Vec::with_capacity(cohort.len());
        for &shard in &cohort {
            let teacher = match &self.variant {
                Variant::FareDust(history) if self.cfg.rho > 0.0 => {
                    let cid = sim.data.shards[shard].client_id as u64;
                    let mut rng = sim.streams.stream(Purpose::Teacher, cid, t);
                    match history.sample(&mut rng) {
                        Some(entry) => Some(Arc::new(build_teacher(&w, entry, self.cfg.eta_g)?)),
                        None if self.cfg.self_distill_when_empty => Some(Arc::clone(&w)),
                        None => None,
                    }
                }
                _ => None,
            };
            requests.push(DispatchRequest {
                shard,
                round_id: t,
                w_start: Arc::clone(&w),
                teacher,
                model_version: self.server.t,
            });
        }
        let now = sim.now();
        let dispatched = sim.dispatch(requests)?;
        if let Variant::Feast(state, _) = &mut self.variant {
            let deadline = now + self.cfg.tau_max;
            state.open_round(t, self.server.w.clone(), cohort.len(), deadline)?;
            if deadline.is_finite() {
                sim.queue.schedule(deadline, EventKind::AuxDeadline(t))?;
            }
        }
        if self.options.record_rounds {
            self.current_log = Some(RoundLog {
                round: t,
                started_at: now,
                closed_at: f64::NAN,
                cohort: dispatched,
            });
        }
        trace!("round {t} opened at {now:.2} with {} clients", cohort.len());
        self.round_started = now;
        self.cohort_size = cohort.len();
        self.fast_sum = ParamVector::zeros(self.server.w.len());
        self.fast_count = 0;
        self.closed = false;
        Ok(())
    }

    fn close_round(&mut self, sim: &mut Sim<'_>) -> Result<()> {
        let t = self.round;
        let count = self.fast_count;
        self.server.apply(&self.fast_sum, count, self.cfg.eta_g)?;
        sim.counters.server_steps += 1;
        sim.counters.aggregated_updates += count as u64;
        if let Some(ema) = &mut self.ema {
            ema.update(&self.server.w);
        }
        match &mut self.variant {
            Variant::Plain => {}
            Variant::FareDust(history) => history.push(t, self.fast_sum.clone(), count)?,
            Variant::Feast(state, _) => state.close_fast(t)?,
        }
        if self.options.record_trajectory {
            self.trace.w_trajectory.push(self.server.w.clone());
        }
        if let Some(mut log) = self.current_log.take() {
            log.closed_at = sim.now();
            self.trace.rounds.push(log);
        }
        sim.mark_progress();
        self.closed = true;
        if sim.counters.aggregated_updates >= self.budget {
            self.stop = true;
        }
        let (model, which) = self.output();
        let model = model.clone();
        sim.on_server_step(&model, which)?;
        trace!("round {t} closed at {:.2}", sim.now());
        Ok(())
    }

    fn finalize_aux(&mut self, sim: &mut Sim<'_>) -> Result<()> {
        let Variant::Feast(state, params) = &mut self.variant else {
            return Ok(());
        };
        for done in state.finalize_ready(params)? {
            sim.counters.aux_finalized += 1;
            sim.mark_progress();
            if self.options.record_trajectory {
                self.trace.aux_trajectory.push(state.a.clone());
            }
            trace!("aux round {} finalized with {} updates", done.round, done.count);
        }
        Ok(())
    }

    fn may_open_next(&self) -> bool {
        if !self.closed || self.stop {
            return false;
        }
        match &self.variant {
            Variant::Feast(state, _) if self.cfg.strict_sequential => state.next_round() > self.round,
            _ => true,
        }
    }
}

impl Strategy for SyncStrategy {
    fn start(&mut self, sim: &mut Sim<'_>) -> Result<()> {
        self.open_round(sim)
    }

    fn on_completion(&mut self, sim: &mut Sim<'_>, update: ClientUpdate) -> Result<()> {
        if update.model_version > self.server.t {
            return Err(SimError::Config("update computed on a future model".into()));
        }
        let staleness = self.server.t - update.model_version;
        sim.counters.max_staleness = sim.counters.max_staleness.max(staleness);
        let fast = update.round_id == self.round && !self.closed;
        if fast {
            self.fast_sum.add_assign(&update.delta);
            self.fast_count += 1;
            if let Variant::Feast(state, _) = &mut self.variant {
                state.add_update(update.round_id, &update.delta, true)?;
            }
            if self.fast_count == self.cfg.cohort {
                self.close_round(sim)?;
            }
            return Ok(());
        }
        let used = match &mut self.variant {
            Variant::Plain => false,
            Variant::FareDust(history) => history.fold(update.round_id, &update.delta),
            Variant::Feast(state, _) => state.add_update(update.round_id, &update.delta, false)?,
        };
        if used {
            sim.counters.late_used += 1;
        } else {
            sim.counters.discarded_late += 1;
        }
        Ok(())
    }

    fn on_aux_deadline(&mut self, _sim: &mut Sim<'_>, round: u64) -> Result<()> {
        if let Variant::Feast(state, _) = &mut self.variant {
            state.mark_deadline(round);
        }
        Ok(())
    }

    fn after_instant(&mut self, sim: &mut Sim<'_>) -> Result<()> {
        self.finalize_aux(sim)?;
        if self.may_open_next() {
            self.round += 1;
            self.open_round(sim)?;
            // A zero-length straggler window can close immediately.
            self.finalize_aux(sim)?;
        }
        Ok(())
    }

    fn finished(&self) -> bool {
        match &self.variant {
            Variant::Feast(state, _) => self.stop && state.pending_rounds() == 0,
            _ => self.stop,
        }
    }

    fn output(&self) -> (&ParamVector, WhichModel) {
        match (&self.variant, &self.ema) {
            (Variant::Feast(state, _), _) => (&state.a, WhichModel::Aux),
            (_, Some(Ema { value: Some(v), .. })) => (v, WhichModel::Ema),
            (_, Some(_)) => (&self.server.w, WhichModel::Ema),
            (_, None) => (&self.server.w, WhichModel::Global),
        }
    }

    fn global(&self) -> &ParamVector {
        &self.server.w
    }

    fn into_trace(self: Box<Self>) -> StrategyTrace {
        self.trace
    }
}
