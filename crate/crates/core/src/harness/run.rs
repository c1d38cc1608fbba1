//! The orchestration loop. Clients are closed-loop and virtual: the loop
//! starts each client's next action when the simulator reports its previous
//! one finished, so a run is a pure function of its config.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use super::workload::{initial_rows, WorkloadGen};
use super::{Config, ConfigError, MetricsReport, Mode};
use crate::analytics::{
    cpu_cores, execute, pim_cores, place_chunks, schedule, ChunkSource, ColumnSource, QueryResult, RowSource,
    SchedulerMode,
};
use crate::hw::{CoreId, HwError, SimTask, Simulator, TaskDemand, TaskId};
use crate::propagation::{PreparedBatch, Propagator};
use crate::storage::{ColumnStore, ColumnStoreOptions, RowStore, SnapshotHandle, Timestamp, Value};
use crate::txn::{CommitOutcome, DeltaRecord, TxnEngine, TxnError, TxnHandle};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Hw(#[from] HwError),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("engine error: {0}")]
    Engine(String),
}

fn engine_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Engine(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Convergence and store invariant checks after the run.
    pub check_invariants: bool,
    /// Keep every query's result in [`RunOutput::queries`].
    pub record_queries: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { check_invariants: cfg!(debug_assertions), record_queries: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryRecord {
    pub client: usize,
    pub plan: usize,
    pub submit_time: f64,
    pub finish_time: f64,
    pub result: QueryResult,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: MetricsReport,
    pub initial: Vec<(i64, Vec<Value>)>,
    pub commit_log: Vec<DeltaRecord>,
    pub queries: Vec<QueryRecord>,
}

impl RunOutput {
    pub fn commit_log_jsonl(&self) -> String {
        let mut out = String::new();
        for d in &self.commit_log {
            out.push_str(&serde_json::to_string(d).expect("delta serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
enum Owner {
    Txn(usize),
    Chunk(CoreId),
    Reduce(usize),
    Propagation,
}

struct TxnClient {
    gen: WorkloadGen,
    core: CoreId,
    handle: Option<TxnHandle>,
}

struct Query {
    plan: usize,
    submit: f64,
    result: QueryResult,
    remaining: usize,
    reduce: TaskDemand,
    reduce_core: CoreId,
    snapshot_ts: Timestamp,
    _pin: Option<SnapshotHandle>,
}

#[derive(Default)]
struct Runner {
    queue: VecDeque<(usize, TaskDemand)>,
    busy: Option<usize>,
}

#[derive(Default)]
struct Origins {
    txn: TaskDemand,
    analytics: TaskDemand,
    propagation: TaskDemand,
}

#[derive(Default)]
struct Lag {
    area_ts: f64,
    area_records: f64,
    max_ts: u64,
    max_records: usize,
    last_time: f64,
    last: (u64, usize),
}

impl Lag {
    fn sample(&mut self, now: f64, ts: u64, records: usize) {
        let dt = now - self.last_time;
        self.area_ts += dt * self.last.0 as f64;
        self.area_records += dt * self.last.1 as f64;
        self.last_time = now;
        self.last = (ts, records);
        self.max_ts = self.max_ts.max(ts);
        self.max_records = self.max_records.max(records);
    }
}

struct World<'a> {
    cfg: &'a Config,
    opts: RunOptions,
    sim: Simulator,
    engine: TxnEngine,
    rows: Arc<RowStore>,
    columns: Option<ColumnStore>,
    propagator: Option<Arc<Propagator>>,
    placement: Vec<usize>,
    owners: BTreeMap<TaskId, Owner>,
    txn_clients: Vec<TxnClient>,
    queries: Vec<Option<Query>>,
    next_plan: Vec<usize>,
    runners: BTreeMap<CoreId, Runner>,
    prop_in_flight: Option<(PreparedBatch, usize)>,
    origins: Origins,
    lag: Lag,
    txns_issued: usize,
    queries_issued: usize,
    commits: u64,
    read_only: u64,
    aborts: u64,
    queries_done: u64,
    steals: usize,
    records: Vec<QueryRecord>,
    commits_since_gc: usize,
}

impl World<'_> {
    fn mode(&self) -> Mode {
        self.cfg.workload.mode
    }

    fn submit(&mut self, demand: TaskDemand, core: CoreId, owner: Owner) -> Result<(), HarnessError> {
        match owner {
            Owner::Txn(_) => self.origins.txn.add(&demand),
            Owner::Chunk(_) | Owner::Reduce(_) => self.origins.analytics.add(&demand),
            Owner::Propagation => self.origins.propagation.add(&demand),
        }
        let id = self.sim.submit(SimTask::new(demand, core))?;
        self.owners.insert(id, owner);
        Ok(())
    }

    // Fixed-work runs issue exactly max_txns / max_queries (0 = none) and
    // ignore the duration; otherwise clients start work until the duration.
    fn fixed_work(&self) -> bool {
        self.cfg.workload.max_txns > 0 || self.cfg.workload.max_queries > 0
    }

    fn txn_budget_left(&self) -> bool {
        if self.fixed_work() {
            self.txns_issued < self.cfg.workload.max_txns
        } else {
            self.sim.now() < self.cfg.workload.duration
        }
    }

    fn query_budget_left(&self) -> bool {
        if self.fixed_work() {
            self.queries_issued < self.cfg.workload.max_queries
        } else {
            self.sim.now() < self.cfg.workload.duration
        }
    }

    fn start_txn(&mut self, client: usize) -> Result<(), HarnessError> {
        if !self.txn_budget_left() {
            return Ok(());
        }
        self.txns_issued += 1;
        let action = self.txn_clients[client].gen.next_action();
        let mut h = self.engine.begin();
        for &k in &action.reads {
            self.engine.txn_read(&mut h, k).map_err(engine_err)?;
        }
        for (k, v) in action.writes {
            self.engine.txn_write(&mut h, k, v).map_err(engine_err)?;
        }
        let demand = h.demand().clone();
        let core = self.txn_clients[client].core;
        self.txn_clients[client].handle = Some(h);
        self.submit(demand, core, Owner::Txn(client))
    }

    fn finish_txn(&mut self, client: usize) -> Result<(), HarnessError> {
        let Some(mut h) = self.txn_clients[client].handle.take() else {
            return Ok(());
        };
        match self.engine.commit(&mut h) {
            Ok(CommitOutcome::ReadOnly) => {
                self.commits += 1;
                self.read_only += 1;
            }
            Ok(CommitOutcome::Committed(_)) => {
                self.commits += 1;
                self.commits_since_gc += 1;
            }
            Err(TxnError::WriteWriteConflict { .. }) => self.aborts += 1,
            Err(e) => return Err(engine_err(e)),
        }
        if self.commits_since_gc >= 256 {
            self.commits_since_gc = 0;
            self.gc_rows();
        }
        self.start_txn(client)
    }

    fn gc_rows(&mut self) {
        let mut watermark = self.engine.oldest_active_snapshot().unwrap_or(self.engine.latest_commit_ts());
        if self.mode() == Mode::Shared {
            for q in self.queries.iter().flatten() {
                watermark = watermark.min(q.snapshot_ts);
            }
        }
        self.rows.gc(watermark);
    }

    fn start_query(&mut self, client: usize) -> Result<(), HarnessError> {
        if !self.query_budget_left() {
            return Ok(());
        }
        self.queries_issued += 1;
        let cfg = self.cfg;
        let plans = &cfg.workload.plans;
        let plan_idx = (client + self.next_plan[client]) % plans.len();
        self.next_plan[client] += 1;
        let plan = &plans[plan_idx];
        let cost = &cfg.cost.scan;

        let (exec, pin, snapshot_ts) = match &self.columns {
            Some(store) if self.mode() != Mode::Shared => {
                let handle = store.snapshot_latest();
                let src = ColumnSource::new(store.schema(), handle.clone());
                let build = plan.join.as_ref().map(|_| &src as &dyn ChunkSource);
                let exec = execute(plan, &src, build, cost).map_err(engine_err)?;
                let ts = handle.snapshot_ts();
                (exec, Some(handle), ts)
            }
            _ => {
                let ts = self.engine.latest_commit_ts();
                let src = RowSource::new(&self.rows, ts, self.placement.clone());
                let build = plan.join.as_ref().map(|_| &src as &dyn ChunkSource);
                (execute(plan, &src, build, cost).map_err(engine_err)?, None, ts)
            }
        };

        let hw = self.sim.config().clone();
        let (cores, mode) = match self.mode() {
            Mode::Islands => (pim_cores(&hw), self.cfg.workload.scheduler),
            _ => (cpu_cores(&hw), SchedulerMode::Cpu),
        };
        let sched = schedule(&exec.tasks, &cores, mode, &hw);
        self.steals += sched.steals;
        for (core, order) in &sched.order {
            let runner = self.runners.entry(*core).or_default();
            for &t in order {
                runner.queue.push_back((client, exec.tasks[t].demand_on(*core)));
            }
        }
        let (reduce, reduce_core) = match self.mode() {
            Mode::Islands => {
                let mut d = TaskDemand::compute(exec.reduce.compute_ops);
                d.link_bytes = exec.reduce.bytes;
                (d, CoreId::Pim { vault: 0, slot: 0 })
            }
            _ => (TaskDemand::offchip(exec.reduce.compute_ops, exec.reduce.bytes), CoreId::Cpu(0)),
        };
        self.queries[client] = Some(Query {
            plan: plan_idx,
            submit: self.sim.now(),
            result: exec.result,
            remaining: exec.tasks.len(),
            reduce,
            reduce_core,
            snapshot_ts,
            _pin: pin,
        });
        if exec.tasks.is_empty() {
            return self.submit_reduce(client);
        }
        let cores: Vec<CoreId> = sched.order.keys().copied().collect();
        for core in cores {
            self.kick(core)?;
        }
        Ok(())
    }

    fn kick(&mut self, core: CoreId) -> Result<(), HarnessError> {
        let runner = self.runners.entry(core).or_default();
        if runner.busy.is_some() {
            return Ok(());
        }
        if let Some((client, demand)) = runner.queue.pop_front() {
            runner.busy = Some(client);
            self.submit(demand, core, Owner::Chunk(core))?;
        }
        Ok(())
    }

    fn finish_chunk(&mut self, core: CoreId) -> Result<(), HarnessError> {
        let client = self.runners.get_mut(&core).and_then(|r| r.busy.take());
        self.kick(core)?;
        let Some(client) = client else { return Ok(()) };
        let q = self.queries[client].as_mut().expect("chunk task of an active query");
        q.remaining -= 1;
        if q.remaining == 0 {
            self.submit_reduce(client)?;
        }
        Ok(())
    }

    fn submit_reduce(&mut self, client: usize) -> Result<(), HarnessError> {
        let q = self.queries[client].as_ref().expect("active query");
        let (d, core) = (q.reduce.clone(), q.reduce_core);
        self.submit(d, core, Owner::Reduce(client))
    }

    fn finish_query(&mut self, client: usize) -> Result<(), HarnessError> {
        let q = self.queries[client].take().expect("active query");
        self.queries_done += 1;
        if self.opts.record_queries {
            self.records.push(QueryRecord {
                client,
                plan: q.plan,
                submit_time: q.submit,
                finish_time: self.sim.now(),
                result: q.result,
            });
        }
        self.start_query(client)
    }

    fn clients_idle(&self) -> bool {
        self.txn_clients.iter().all(|c| c.handle.is_none()) && self.queries.iter().all(Option::is_none)
    }

    fn try_propagate(&mut self, drain: bool) -> Result<(), HarnessError> {
        let (Some(p), Some(store)) = (&self.propagator, &self.columns) else {
            return Ok(());
        };
        if self.prop_in_flight.is_some() {
            return Ok(());
        }
        let policy = self.cfg.workload.propagation;
        let batch = if drain { p.flush_batch(policy.max_records) } else { p.form_batch(policy) };
        let Some(batch) = batch else { return Ok(()) };
        let prepared = p.prepare(&batch, store).map_err(engine_err)?;
        let n_cpu = self.cfg.hardware.n_cpu_cores;
        let tasks: Vec<(TaskDemand, CoreId)> = prepared
            .bill
            .per_vault
            .iter()
            .map(|(&v, d)| match self.mode() {
                Mode::Islands => (d.clone(), CoreId::Pim { vault: v, slot: 0 }),
                _ => (TaskDemand::offchip(d.compute_ops, d.total_internal_bytes()), CoreId::Cpu(v % n_cpu)),
            })
            .collect();
        if tasks.is_empty() {
            return self.publish(prepared);
        }
        self.prop_in_flight = Some((prepared, tasks.len()));
        for (d, core) in tasks {
            self.submit(d, core, Owner::Propagation)?;
        }
        Ok(())
    }

    fn publish(&mut self, prepared: PreparedBatch) -> Result<(), HarnessError> {
        let (Some(p), Some(store)) = (&self.propagator, &self.columns) else {
            return Ok(());
        };
        p.publish(prepared, store).map_err(engine_err)?;
        store.gc(store.newest_ts());
        Ok(())
    }

    fn finish_propagation(&mut self) -> Result<(), HarnessError> {
        if let Some((_, n)) = self.prop_in_flight.as_mut() {
            *n -= 1;
            if *n == 0 {
                let (prepared, _) = self.prop_in_flight.take().expect("in flight");
                self.publish(prepared)?;
            }
        }
        Ok(())
    }

    fn sample_lag(&mut self) {
        let (ts, records) = match &self.propagator {
            Some(p) => {
                let l = p.freshness_lag();
                (l.timestamps, l.records)
            }
            None => (0, 0),
        };
        self.lag.sample(self.sim.now(), ts, records);
    }
}

/// Runs one configuration to completion.
pub fn run(cfg: &Config) -> Result<RunOutput, HarnessError> {
    run_with(cfg, RunOptions::default())
}

pub fn run_with(cfg: &Config, opts: RunOptions) -> Result<RunOutput, HarnessError> {
    cfg.validate()?;
    let w = &cfg.workload;
    let schema = cfg.table.schema()?;
    let initial = initial_rows(cfg);
    let rows = Arc::new(RowStore::new(schema.clone()));
    rows.load_initial(initial.iter().cloned()).map_err(engine_err)?;

    let chunk_count = cfg.chunk_count();
    let placement = place_chunks(chunk_count, cfg.hardware.n_vaults);
    let mut engine = TxnEngine::new(rows.clone()).with_cost_model(crate::txn::TxnCostModel {
        cache_hit_rate: cfg.hardware.txn_cache_hit_rate,
        ..cfg.cost.txn
    });
    let (columns, propagator) = if w.mode == Mode::Shared {
        (None, None)
    } else {
        let options = ColumnStoreOptions {
            chunk_count,
            chunk_capacity: cfg.table.chunk_capacity,
            vault_count: cfg.hardware.n_vaults,
        };
        let store = ColumnStore::with_rows(schema.clone(), options, initial.iter().cloned()).map_err(engine_err)?;
        let p = Arc::new(Propagator::new(Timestamp::ZERO).with_cost(cfg.cost.apply));
        engine = engine.with_sink(p.clone());
        (Some(store), Some(p))
    };

    let n_cpu = cfg.hardware.n_cpu_cores;
    let mut world = World {
        cfg,
        opts,
        sim: Simulator::new(cfg.hardware.clone())?,
        engine,
        rows,
        columns,
        propagator,
        placement,
        owners: BTreeMap::new(),
        txn_clients: (0..w.txn_clients)
            .map(|i| TxnClient { gen: WorkloadGen::new(cfg, i), core: CoreId::Cpu(i % n_cpu), handle: None })
            .collect(),
        queries: (0..w.analytical_clients).map(|_| None).collect(),
        next_plan: vec![0; w.analytical_clients],
        runners: BTreeMap::new(),
        prop_in_flight: None,
        origins: Origins::default(),
        lag: Lag::default(),
        txns_issued: 0,
        queries_issued: 0,
        commits: 0,
        read_only: 0,
        aborts: 0,
        queries_done: 0,
        steals: 0,
        records: Vec::new(),
        commits_since_gc: 0,
    };

    for i in 0..w.txn_clients {
        world.start_txn(i)?;
    }
    for i in 0..w.analytical_clients {
        world.start_query(i)?;
    }
    let fixed_work = world.fixed_work();
    let limit = if fixed_work { f64::INFINITY } else { w.duration };
    loop {
        let drain = fixed_work && world.clients_idle();
        world.try_propagate(drain)?;
        world.sample_lag();
        if drain && world.prop_in_flight.is_none() {
            break;
        }
        let done = world.sim.advance_to_next_completion(limit)?;
        if done.is_empty() && (fixed_work || world.sim.now() >= w.duration) {
            break;
        }
        for c in done {
            match world.owners.remove(&c.id) {
                Some(Owner::Txn(i)) => world.finish_txn(i)?,
                Some(Owner::Chunk(core)) => world.finish_chunk(core)?,
                Some(Owner::Reduce(i)) => world.finish_query(i)?,
                Some(Owner::Propagation) => world.finish_propagation()?,
                None => {}
            }
        }
        world.sample_lag();
    }
    let end = world.sim.now();
    world.sample_lag();

    // unfinished transactions never commit
    for c in world.txn_clients.iter_mut() {
        if let Some(mut h) = c.handle.take() {
            world.engine.abort(&mut h).map_err(engine_err)?;
        }
    }
    let lag_final = world.propagator.as_ref().map_or(0, |p| p.freshness_lag().timestamps);
    let metrics = report(&world, end, lag_final);

    if opts.check_invariants {
        check_end_of_run(&mut world)?;
    }
    Ok(RunOutput { metrics, initial, commit_log: world.engine.commit_log(), queries: world.records })
}

/// Applies whatever is still queued, then requires both replicas to agree at
/// the latest commit and both stores to pass their own checks.
fn check_end_of_run(world: &mut World) -> Result<(), HarnessError> {
    world.rows.check_invariants().map_err(HarnessError::Invariant)?;
    if let Some((prepared, _)) = world.prop_in_flight.take() {
        world.publish(prepared)?;
    }
    let (Some(p), Some(store)) = (&world.propagator, &world.columns) else {
        return Ok(());
    };
    p.drain(store, world.cfg.workload.propagation.max_records).map_err(engine_err)?;
    store.check_invariants().map_err(HarnessError::Invariant)?;
    let latest = world.engine.latest_commit_ts();
    if p.applied_ts() != latest || p.freshness_lag().records != 0 {
        return Err(HarnessError::Invariant(format!(
            "replica applied through {} but latest commit is {latest}",
            p.applied_ts()
        )));
    }
    compare(world.rows.scan_at(latest).rows, store.snapshot_latest().rows().collect())
}

fn compare(rows: Vec<(i64, Vec<Value>)>, mut cols: Vec<(i64, Vec<Value>)>) -> Result<(), HarnessError> {
    cols.sort_by_key(|(k, _)| *k);
    if rows != cols {
        let first = rows.iter().zip(&cols).position(|(a, b)| a != b).unwrap_or(rows.len().min(cols.len()));
        return Err(HarnessError::Invariant(format!(
            "replicas diverge: {} row-store rows vs {} column-store rows, first difference at position {first}",
            rows.len(),
            cols.len()
        )));
    }
    Ok(())
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn report(world: &World, end: f64, lag_final: u64) -> MetricsReport {
    let cfg = world.cfg;
    let hw = &cfg.hardware;
    let served = world.sim.service_totals();
    let e = world.sim.energy_report();
    let o = &world.origins;
    let n_pim = hw.n_pim_cores() as f64;
    MetricsReport {
        mode: cfg.workload.mode,
        seed: cfg.workload.seed,
        duration_s: end,
        txn_clients: cfg.workload.txn_clients,
        analytical_clients: cfg.workload.analytical_clients,
        txn_commits: world.commits,
        txn_read_only: world.read_only,
        txn_aborts: world.aborts,
        txn_throughput: ratio(world.commits as f64, end),
        queries_completed: world.queries_done,
        analytical_throughput: ratio(world.queries_done as f64, end),
        lag_mean_ts: ratio(world.lag.area_ts, end),
        lag_max_ts: world.lag.max_ts,
        lag_mean_records: ratio(world.lag.area_records, end),
        lag_max_records: world.lag.max_records,
        lag_final_ts: lag_final,
        batches_applied: world.propagator.as_ref().map_or(0, |p| p.stats().batches_applied),
        records_applied: world.propagator.as_ref().map_or(0, |p| p.stats().records_applied),
        max_batch_span_ts: world.propagator.as_ref().map_or(0, |p| p.stats().max_batch_span),
        steals: world.steals,
        served_cpu_ops: served.cpu_ops,
        served_pim_ops: served.pim_ops,
        served_vault_bytes: served.vault_bytes,
        served_link_bytes: served.link_bytes,
        served_offchip_bytes: served.offchip_bytes,
        txn_offchip_bytes: o.txn.offchip_bytes,
        analytics_offchip_bytes: o.analytics.offchip_bytes,
        analytics_internal_bytes: o.analytics.total_internal_bytes(),
        analytics_link_bytes: o.analytics.link_bytes,
        propagation_offchip_bytes: o.propagation.offchip_bytes,
        propagation_internal_bytes: o.propagation.total_internal_bytes(),
        energy_cpu_ops: e.cpu_ops,
        energy_pim_ops: e.pim_ops,
        energy_offchip_bytes: e.offchip_bytes,
        energy_internal_bytes: e.internal_bytes,
        energy_cpu_pj: e.cpu_compute_pj,
        energy_pim_pj: e.pim_compute_pj,
        energy_offchip_pj: e.offchip_pj,
        energy_internal_pj: e.internal_pj,
        energy_total_pj: e.total_pj(),
        util_cpu: ratio(served.cpu_ops, hw.n_cpu_cores as f64 * hw.cpu_rate * end),
        util_pim: ratio(served.pim_ops, n_pim * hw.pim_rate * end),
        util_vault: ratio(served.vault_bytes, hw.n_vaults as f64 * hw.vault_bw * end),
        util_link: ratio(served.link_bytes, hw.internal_link_bw * end),
        util_offchip: ratio(served.offchip_bytes, hw.offchip_bw * end),
    }
}
