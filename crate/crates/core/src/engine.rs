//! Discrete-event simulation loop.
//!
//! Events fire in `(fire_at, seq)` order. All events sharing one instant are
//! delivered before the strategy's `after_instant` hook runs, so decisions that
//! depend on "everything that happened at time t" (starting the next round,
//! refilling FedBuff's concurrency slots) see a consistent state.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::Arc;

use log::debug;
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algorithms::fedbuff::FedBuffStrategy;
use crate::algorithms::sync::{time_limited_steps, SyncStrategy};
use crate::algorithms::{Algorithm, ClientUpdate};
use crate::config::{EvalConfig, ExperimentConfig};
use crate::data::{Example, FederatedDataset};
use crate::error::{invalid, Result, SimError};
use crate::latency::{nearest_rank, LatencyScenario};
use crate::metrics::{evaluate, MetricsRecord, WhichModel};
use crate::model::{init_params, local_sgd, Layout, LocalTraining, LocalWork};
use crate::params::ParamVector;
use crate::rng::{Purpose, Streams};

/// Virtual time in seconds. Never moves backwards.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Clock {
    now: f64,
}

impl Clock {
    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn advance_to(&mut self, t: f64) -> Result<()> {
        if t < self.now {
            return Err(SimError::EventInPast { fire_at: t, now: self.now });
        }
        self.now = t;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    ClientCompleted(Box<ClientUpdate>),
    /// Straggler window of a FeAST round has closed.
    AuxDeadline(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub fire_at: f64,
    pub seq: u64,
    pub kind: EventKind,
}

struct Queued(Event);

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    // Reversed so that `BinaryHeap` pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .fire_at
            .total_cmp(&self.0.fire_at)
            .then_with(|| other.0.seq.cmp(&self.0.seq))
    }
}

/// Min-heap of events keyed by `(fire_at, seq)` with an attached clock.
#[derive(Default)]
pub struct EventQueue {
    heap: BinaryHeap<Queued>,
    next_seq: u64,
    clock: Clock,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> f64 {
        self.clock.now()
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Queue an event; returns its sequence number.
    pub fn schedule(&mut self, fire_at: f64, kind: EventKind) -> Result<u64> {
        if fire_at.is_nan() {
            return Err(SimError::NonFinite("event time".into()));
        }
        if fire_at < self.clock.now() {
            return Err(SimError::EventInPast {
                fire_at,
                now: self.clock.now(),
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Queued(Event { fire_at, seq, kind }));
        Ok(seq)
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|q| q.0.fire_at)
    }

    /// Earliest event, advancing the clock to its time. `None` when empty.
    pub fn pop(&mut self) -> Option<Event> {
        let Queued(ev) = self.heap.pop()?;
        self.clock
            .advance_to(ev.fire_at)
            .expect("queued events are never in the past");
        Some(ev)
    }
}

/// Work order for one client.
#[derive(Debug, Clone)]
pub struct DispatchRequest {
    /// Index into the dataset's shard list.
    pub shard: usize,
    pub round_id: u64,
    pub w_start: Arc<ParamVector>,
    /// Distillation teacher; `None` disables distillation for this client.
    pub teacher: Option<Arc<ParamVector>>,
    pub model_version: u64,
}

/// Scheduled completion of a dispatched client.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Dispatched {
    pub client_id: usize,
    pub completed_at: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub dispatched: u64,
    pub completed: u64,
    pub server_steps: u64,
    pub aggregated_updates: u64,
    /// Updates that arrived too late and were dropped.
    pub discarded_late: u64,
    /// Late updates that were folded into a delta history or a straggler window.
    pub late_used: u64,
    pub aux_finalized: u64,
    pub max_staleness: u64,
}

/// Shared simulation context handed to strategies.
pub struct Sim<'a> {
    pub data: &'a FederatedDataset,
    pub layout: Layout,
    pub streams: Streams,
    pub queue: EventQueue,
    pub counters: Counters,
    latency: &'a LatencyScenario,
    training: LocalTraining,
    time_limit_s: Option<f64>,
    exclusive: bool,
    active: Vec<bool>,
    n_active: usize,
    eval: EvalConfig,
    eval_total: &'a [Example],
    eval_straggler: &'a [Example],
    records: Vec<MetricsRecord>,
    last_progress_s: f64,
}

impl<'a> Sim<'a> {
    pub fn n_clients(&self) -> usize {
        self.data.shards.len()
    }

    pub fn now(&self) -> f64 {
        self.queue.now()
    }

    pub fn n_active(&self) -> usize {
        self.n_active
    }

    pub fn is_active(&self, shard: usize) -> bool {
        self.active[shard]
    }

    pub fn time_limit_s(&self) -> Option<f64> {
        self.time_limit_s
    }

    /// Time of the last server step or auxiliary finalization.
    pub fn last_progress_s(&self) -> f64 {
        self.last_progress_s
    }

    pub fn mark_progress(&mut self) {
        self.last_progress_s = self.now();
    }

    /// Uniform sample of `n` shard indices without replacement from clients
    /// eligible for dispatch, in ascending order. Fewer are returned when not
    /// enough clients are idle.
    pub fn sample_clients(&self, key: u64, n: usize) -> Vec<usize> {
        let pool: Vec<usize> = if self.exclusive {
            (0..self.n_clients()).filter(|&i| !self.active[i]).collect()
        } else {
            (0..self.n_clients()).collect()
        };
        let mut rng = self.streams.stream(Purpose::Cohort, key, 0);
        let k = n.min(pool.len());
        let mut picked: Vec<usize> = index::sample(&mut rng, pool.len(), k)
            .into_iter()
            .map(|i| pool[i])
            .collect();
        picked.sort_unstable();
        picked
    }

    fn run_client(&self, req: &DispatchRequest, now: f64) -> Result<ClientUpdate> {
        let shard = &self.data.shards[req.shard];
        let cid = shard.client_id as u64;
        let mut lrng = self.streams.stream(Purpose::Latency, cid, req.round_id);
        let mut factors = self.latency.profile(shard.is_straggler).sample_factors(&mut lrng)?;
        if req.teacher.is_some() {
            factors.comm_s *= self.latency.teacher_download_factor;
        }
        let batch = self.training.batch_size.min(shard.len());
        let work = match self.time_limit_s {
            Some(limit) => LocalWork::Steps(time_limited_steps(
                limit,
                factors.overhead_s,
                factors.per_example_s,
                batch,
            )),
            None => self.training.work,
        };
        let training = LocalTraining {
            work,
            rho: if req.teacher.is_some() { self.training.rho } else { 0.0 },
            ..self.training
        };
        let anchor = (training.nu > 0.0).then_some(req.w_start.as_ref());
        let mut srng = self.streams.stream(Purpose::Shuffle, cid, req.round_id);
        let out = local_sgd(
            &self.layout,
            &req.w_start,
            &shard.examples,
            &training,
            req.teacher.as_deref(),
            anchor,
            &mut srng,
        )?;
        let delta = req.w_start.sub(&out.w);
        let sample = factors.compose(out.examples_processed);
        Ok(ClientUpdate {
            round_id: req.round_id,
            client_id: shard.client_id,
            delta,
            dispatched_at: now,
            completed_at: now + sample.total_s,
            examples_processed: out.examples_processed,
            steps: out.steps,
            model_version: req.model_version,
        })
    }

    /// Run local training for every request and schedule the completions in
    /// request order. Training may run on the rayon pool; the outcome does
    /// not depend on the number of worker threads.
    pub fn dispatch(&mut self, requests: Vec<DispatchRequest>) -> Result<Vec<Dispatched>> {
        let now = self.now();
        for r in &requests {
            if self.exclusive && self.active[r.shard] {
                return Err(SimError::Config(format!("client {} dispatched while active", r.shard)));
            }
        }
        let updates: Vec<Result<ClientUpdate>> = if requests.len() > 1 {
            requests.par_iter().map(|r| self.run_client(r, now)).collect()
        } else {
            requests.iter().map(|r| self.run_client(r, now)).collect()
        };
        let mut out = Vec::with_capacity(updates.len());
        for (req, update) in requests.iter().zip(updates) {
            let update = update?;
            out.push(Dispatched {
                client_id: update.client_id,
                completed_at: update.completed_at,
            });
            self.queue
                .schedule(update.completed_at, EventKind::ClientCompleted(Box::new(update)))?;
            if !self.active[req.shard] {
                self.n_active += 1;
            }
            self.active[req.shard] = true;
            self.counters.dispatched += 1;
        }
        Ok(out)
    }

    fn shard_of(&self, client_id: usize) -> Result<usize> {
        self.data
            .shards
            .binary_search_by_key(&client_id, |s| s.client_id)
            .map_err(|_| SimError::Config(format!("unknown client id {client_id}")))
    }

    /// Record an evaluation if `server_step` falls on the cadence.
    pub fn on_server_step(&mut self, model: &ParamVector, which: WhichModel) -> Result<()> {
        let every = self.eval.every_server_steps;
        if every > 0 && self.counters.server_steps % every == 0 {
            self.record(model, which)?;
        }
        Ok(())
    }

    /// Evaluate `model` now and append a record.
    pub fn record(&mut self, model: &ParamVector, which: WhichModel) -> Result<()> {
        let (total_acc, straggler_acc) = evaluate(&self.layout, model, self.eval_total, self.eval_straggler)?;
        let rec = MetricsRecord {
            virtual_time_s: self.now(),
            server_step: self.counters.server_steps,
            aggregated_updates: self.counters.aggregated_updates,
            total_acc,
            straggler_acc,
            which_model: which,
        };
        if let Some(last) = self.records.last() {
            if last.server_step == rec.server_step && last.virtual_time_s == rec.virtual_time_s {
                self.records.pop();
            }
        }
        self.records.push(rec);
        Ok(())
    }
}

/// Hooks through which an algorithm drives the simulation.
pub trait Strategy {
    /// Dispatch the initial clients at time 0.
    fn start(&mut self, sim: &mut Sim<'_>) -> Result<()>;

    fn on_completion(&mut self, sim: &mut Sim<'_>, update: ClientUpdate) -> Result<()>;

    fn on_aux_deadline(&mut self, _sim: &mut Sim<'_>, _round: u64) -> Result<()> {
        Ok(())
    }

    /// Called once after all events of an instant have been delivered.
    fn after_instant(&mut self, sim: &mut Sim<'_>) -> Result<()>;

    fn finished(&self) -> bool;

    /// The model this algorithm reports, and which kind it is.
    fn output(&self) -> (&ParamVector, WhichModel);

    fn global(&self) -> &ParamVector;

    fn into_trace(self: Box<Self>) -> StrategyTrace;
}

/// Optional per-run recordings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StrategyTrace {
    /// Global model after every server step (index 0 is the initial model).
    pub w_trajectory: Vec<ParamVector>,
    /// Auxiliary model after every finalized round (index 0 is `a_0`).
    pub aux_trajectory: Vec<ParamVector>,
    pub rounds: Vec<RoundLog>,
}

/// One synchronous round: who was sampled and when each would finish.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundLog {
    pub round: u64,
    pub started_at: f64,
    pub closed_at: f64,
    pub cohort: Vec<Dispatched>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub record_trajectory: bool,
    pub record_rounds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub total_time_s: f64,
    pub server_steps: u64,
    pub aggregated_updates: u64,
    pub final_total_acc: f64,
    pub final_straggler_acc: Option<f64>,
    pub which_model: WhichModel,
    pub time_limit_s: Option<f64>,
    pub counters: Counters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub records: Vec<MetricsRecord>,
    pub summary: RunSummary,
    pub final_model: ParamVector,
    pub global_model: ParamVector,
    pub trace: StrategyTrace,
}

/// Population-wide 75th percentile of one-epoch on-device compute time.
pub fn auto_time_limit(data: &FederatedDataset, latency: &LatencyScenario, streams: &Streams) -> Result<f64> {
    if data.shards.is_empty() {
        return Err(SimError::Empty("client population"));
    }
    let mut times = Vec::with_capacity(data.shards.len());
    for s in &data.shards {
        let mut rng = streams.stream(Purpose::TimeLimit, s.client_id as u64, 0);
        let f = latency.profile(s.is_straggler).sample_factors(&mut rng)?;
        times.push(f.compute_s(s.len()));
    }
    times.sort_by(f64::total_cmp);
    nearest_rank(&times, 75.0)
}

/// Build the dataset for `seed` and run one experiment.
pub fn run_experiment(config: &ExperimentConfig, seed: u64, options: RunOptions) -> Result<RunOutput> {
    config.validate()?;
    let data = FederatedDataset::build(&config.dataset, config.data_seed.unwrap_or(seed))?;
    run_on_dataset(config, &data, seed, options)
}

/// Run one experiment on an existing dataset.
pub fn run_on_dataset(
    config: &ExperimentConfig,
    data: &FederatedDataset,
    seed: u64,
    options: RunOptions,
) -> Result<RunOutput> {
    config.validate()?;
    if data.shards.is_empty() {
        return Err(SimError::Empty("client population"));
    }
    if data.shards.windows(2).any(|w| w[0].client_id >= w[1].client_id) {
        return Err(SimError::Config("dataset shards must be sorted by client id".into()));
    }
    if data.eval_total.is_empty() {
        return Err(SimError::Empty("evaluation split"));
    }
    let algo = &config.algo;
    if algo.algorithm.is_synchronous() && data.shards.len() < algo.cohort_over {
        return Err(invalid(
            "cohort_over",
            format!("{} clients cannot fill a cohort of {}", data.shards.len(), algo.cohort_over),
        ));
    }
    let layout = config.model.layout(data.d_in(), data.n_classes());
    let streams = Streams::new(seed);
    let w0 = init_params(&layout, config.model.init_scale, &mut streams.stream(Purpose::ModelInit, 0, 0));
    let time_limit_s = if algo.time_limit {
        Some(match algo.time_limit_s {
            Some(s) => s,
            None => auto_time_limit(data, &config.latency, &streams)?,
        })
    } else {
        None
    };
    let cap = config.eval.cap;
    let mut sim = Sim {
        data,
        layout,
        streams,
        queue: EventQueue::new(),
        counters: Counters::default(),
        latency: &config.latency,
        training: LocalTraining {
            work: algo.local_work,
            batch_size: algo.batch_size,
            eta_l: algo.eta_l,
            rho: algo.rho,
            nu: algo.nu,
            distill: config.model.distill,
        },
        time_limit_s,
        exclusive: algo.exclusive_clients,
        active: vec![false; data.shards.len()],
        n_active: 0,
        eval: config.eval,
        eval_total: &data.eval_total[..data.eval_total.len().min(cap)],
        eval_straggler: &data.eval_straggler[..data.eval_straggler.len().min(cap)],
        records: Vec::new(),
        last_progress_s: 0.0,
    };

    let mut strategy: Box<dyn Strategy> = match algo.algorithm {
        Algorithm::FedBuff => Box::new(FedBuffStrategy::new(algo, w0, config.budget, options)?),
        _ => Box::new(SyncStrategy::new(algo, w0, config.budget, options)?),
    };

    strategy.start(&mut sim)?;
    strategy.after_instant(&mut sim)?;
    while !strategy.finished() {
        let Some(first) = sim.queue.pop() else {
            return Err(SimError::Config("simulation stalled with an empty event queue".into()));
        };
        let now = first.fire_at;
        deliver(strategy.as_mut(), &mut sim, first)?;
        while sim.queue.peek_time() == Some(now) {
            let ev = sim.queue.pop().expect("peeked");
            deliver(strategy.as_mut(), &mut sim, ev)?;
        }
        strategy.after_instant(&mut sim)?;
    }

    let total_time_s = sim.last_progress_s();
    let (model, which) = strategy.output();
    let final_model = model.clone();
    let global_model = strategy.global().clone();
    // Final evaluation at the time the output model became available.
    let (total_acc, straggler_acc) = evaluate(&sim.layout, &final_model, sim.eval_total, sim.eval_straggler)?;
    let final_rec = MetricsRecord {
        virtual_time_s: total_time_s.max(sim.records.last().map_or(0.0, |r| r.virtual_time_s)),
        server_step: sim.counters.server_steps,
        aggregated_updates: sim.counters.aggregated_updates,
        total_acc,
        straggler_acc,
        which_model: which,
    };
    if sim
        .records
        .last()
        .is_some_and(|r| r.server_step == final_rec.server_step && r.virtual_time_s == final_rec.virtual_time_s)
    {
        sim.records.pop();
    }
    sim.records.push(final_rec);
    debug!(
        "run finished: {} steps, {} updates, {:.1}s virtual",
        sim.counters.server_steps, sim.counters.aggregated_updates, total_time_s
    );
    let summary = RunSummary {
        name: config.label(),
        algorithm: algo.algorithm,
        seed,
        total_time_s,
        server_steps: sim.counters.server_steps,
        aggregated_updates: sim.counters.aggregated_updates,
        final_total_acc: total_acc,
        final_straggler_acc: straggler_acc,
        which_model: which,
        time_limit_s,
        counters: sim.counters,
    };
    let records = std::mem::take(&mut sim.records);
    Ok(RunOutput {
        records,
        summary,
        final_model,
        global_model,
        trace: strategy.into_trace(),
    })
}

fn deliver(strategy: &mut dyn Strategy, sim: &mut Sim<'_>, ev: Event) -> Result<()> {
    match ev.kind {
        EventKind::ClientCompleted(update) => {
            let shard = sim.shard_of(update.client_id)?;
            if sim.active[shard] {
                sim.active[shard] = false;
                sim.n_active -= 1;
            }
            sim.counters.completed += 1;
            debug_assert!(update.completed_at <= sim.now());
            strategy.on_completion(sim, *update)
        }
        EventKind::AuxDeadline(round) => strategy.on_aux_deadline(sim, round),
    }
}
