//! Discrete-event simulation of a workflow run over federated endpoints.
//!
//! Events are ordered by `(time, sequence number)`, so a run is a pure
//! function of the scenario and the configuration. After every batch of
//! same-time events the client takes one scheduling pass.

use std::cmp::Ordering;
use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::hash::{Hash, Hasher};
use std::ops::Range;
use std::path::PathBuf;
use std::time::Instant;

use ordered_float::OrderedFloat;
use rand::Rng;
use thiserror::Error;

use crate::dag::{CostHint, Dag, DataId, FunctionDef, Readiness, TaskId, TaskState};
use crate::data::{
    DataManager, FileTransferType, FinishOutcome, JobId, JobState, LocalCopyBackend, SimulatedBackend, Started,
    TransferBackend,
};
use crate::endpoint::{scale_decision, EndpointModel, EndpointPool, ScaleView};
use crate::metrics::{FailureReport, MetricsLog, Overhead, StagingSample, TaskMetrics, UtilizationSample};
use crate::profiler::{
    average_costs, DeclaredCost, ExecProfiler, FunctionProfile, TaskRecord, TransferObservation, TransferProfiler,
};
use crate::rng::{substream, PURPOSE_EXEC};
use crate::scenario::{FunctionSpec, Scenario, ScenarioError, MB};
use crate::scheduler::{
    capacity_assign, capacity_partition, compute_priorities, delay_dispatch, dha_reschedule, dha_select_endpoint,
    eft, locality_select, reassign_failed, Availability, DelayQueue, LocalityView, PriorityTable, RetryPlan,
    SchedulerKind, StealCandidate,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("deadlock at t={time:.3}s: {count} task(s) can never run\n{detail}")]
    Deadlock { time: f64, count: usize, detail: String },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("local-copy transfers need a root directory (--local-copy-root)")]
    MissingCopyRoot,
    #[error("internal error: {0}")]
    Internal(String),
}

impl SimError {
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::Deadlock { .. } => 2,
            SimError::Scenario(e) => e.exit_code(),
            _ => 1,
        }
    }
}

fn internal(e: impl std::fmt::Display) -> SimError {
    SimError::Internal(e.to_string())
}

/// Everything that shapes a run besides the scenario's content.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scheduler: SchedulerKind,
    pub seed: u64,
    pub poll_interval: f64,
    pub batch_size: usize,
    /// Simulated seconds charged per wall-clock second of scheduling work.
    pub sched_time_factor: f64,
    pub reschedule: bool,
    pub reschedule_period: f64,
    pub max_task_attempts: u32,
    pub transfer_concurrency: usize,
    pub max_transfer_retries: u32,
    pub transfer_failure_rate: f64,
    pub file_transfer_type: FileTransferType,
    pub local_copy_root: Option<PathBuf>,
    pub refresh_interval: f64,
    pub elasticity: bool,
    pub scale_interval: f64,
    pub probe_on_init: bool,
    pub probe_size: u64,
    /// Age of the endpoint status the scheduler sees; 0 means live.
    pub sync_lag: f64,
    /// Execution history loaded before the run starts.
    pub history: Vec<TaskRecord>,
}

impl RunConfig {
    pub fn from_scenario(s: &Scenario) -> Self {
        let d = &s.defaults;
        Self {
            scheduler: d.scheduler,
            seed: d.seed,
            poll_interval: d.poll_interval_s,
            batch_size: d.batch_size,
            sched_time_factor: d.sched_time_factor,
            reschedule: d.reschedule,
            reschedule_period: d.reschedule_period_s,
            max_task_attempts: d.max_task_attempts,
            transfer_concurrency: d.transfer_concurrency,
            max_transfer_retries: d.max_transfer_retries,
            transfer_failure_rate: d.transfer_failure_rate,
            file_transfer_type: d.file_transfer_type,
            local_copy_root: None,
            refresh_interval: d.refresh_interval_s,
            elasticity: d.elasticity,
            scale_interval: d.scale_interval_s,
            probe_on_init: d.probe_on_init,
            probe_size: (d.probe_size_mb * MB).round() as u64,
            sync_lag: d.sync_lag_s,
            history: Vec::new(),
        }
    }
}

/// Runs `scenario` to completion.
pub fn run(scenario: &Scenario, config: &RunConfig) -> Result<MetricsLog, SimError> {
    Engine::new(scenario, config)?.run()
}

/// Ranges of at most `batch` consecutive items covering `0..n`.
pub fn batch_boundaries(n: usize, batch: usize) -> Vec<Range<usize>> {
    let batch = batch.max(1);
    (0..n).step_by(batch).map(|s| s..(s + batch).min(n)).collect()
}

/// First polling instant at or after `t`.
pub fn poll_tick(t: f64, interval: f64) -> f64 {
    if interval <= 0.0 {
        return t;
    }
    let k = (t / interval - 1e-9).ceil().max(0.0);
    let tick = k * interval;
    if tick + 1e-9 < t {
        (k + 1.0) * interval
    } else {
        tick
    }
}

/// Ground-truth execution time of one attempt.
pub fn sample_exec_duration(
    f: &FunctionSpec,
    perf_factor: f64,
    input_bytes: u64,
    seed: u64,
    task: TaskId,
    attempt: u32,
) -> f64 {
    let base = perf_factor * (f.true_fixed_s + f.true_rate_s_per_mb * input_bytes as f64 / MB);
    if f.noise > 0.0 {
        let u: f64 = substream(seed, PURPOSE_EXEC, task as u64, attempt as u64).gen_range(-1.0..=1.0);
        base * (1.0 + f.noise * u)
    } else {
        base
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Ev {
    Arrival(usize),
    Capacity { endpoint: usize, delta: i64 },
    Submit { endpoint: usize, tasks: Vec<TaskId> },
    Complete { task: TaskId, endpoint: usize },
    Poll,
    Transfer(JobId),
    ScaleTick,
    RefreshTick,
    RescheduleTick,
    SyncTick,
}

impl Ev {
    /// Events that can move the workflow forward by themselves.
    fn foreground(&self) -> bool {
        !matches!(self, Ev::ScaleTick | Ev::RefreshTick | Ev::RescheduleTick | Ev::SyncTick)
    }

    fn hash_into(&self, h: &mut DefaultHasher) {
        match self {
            Ev::Arrival(g) => (0u8, *g).hash(h),
            Ev::Capacity { endpoint, delta } => (1u8, *endpoint, *delta).hash(h),
            Ev::Submit { endpoint, tasks } => (2u8, *endpoint, tasks).hash(h),
            Ev::Complete { task, endpoint } => (3u8, *task, *endpoint).hash(h),
            Ev::Poll => 4u8.hash(h),
            Ev::Transfer(j) => (5u8, *j).hash(h),
            Ev::ScaleTick => 6u8.hash(h),
            Ev::RefreshTick => 7u8.hash(h),
            Ev::RescheduleTick => 8u8.hash(h),
            Ev::SyncTick => 9u8.hash(h),
        }
    }
}

#[derive(Debug)]
struct Event {
    time: f64,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // reversed: BinaryHeap pops the earliest event first
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone, Default)]
struct TaskRt {
    entry: usize,
    function: usize,
    deps: Vec<TaskId>,
    declared_inputs: Vec<DataId>,
    pin: Option<usize>,
    forced: Option<usize>,
    endpoint: Option<usize>,
    jobs: Vec<JobId>,
    input_bytes: u64,
    expected_ready: f64,
    predicted_exec: f64,
    exec_duration: f64,
    failed_on: Vec<usize>,
    errors: Vec<String>,
    submitted: Option<f64>,
    deps_done: Option<f64>,
    staged: Option<f64>,
    dispatched: Option<f64>,
    arrived: Option<f64>,
    started: Option<f64>,
    finished: Option<f64>,
    observed: Option<f64>,
}

struct Engine<'a> {
    sc: &'a Scenario,
    cfg: RunConfig,
    n: usize,
    dispatch_latency: f64,
    dag: Dag,
    pool: EndpointPool,
    dm: DataManager,
    exec: ExecProfiler,
    xfer: TransferProfiler,

    queue: BinaryHeap<Event>,
    seq: u64,
    now: f64,
    foreground: usize,
    hasher: DefaultHasher,
    events: u64,

    rt: Vec<TaskRt>,
    arrivals: Vec<(f64, Range<usize>)>,
    remaining: usize,
    open_tasks: usize,
    open_assigned: Vec<u64>,
    unrunnable: BTreeSet<TaskId>,
    terminal_failed: BTreeSet<TaskId>,

    placement: Vec<TaskId>,
    locality_wait: Vec<TaskId>,
    cap_plan: Vec<Option<usize>>,
    priorities: PriorityTable,
    prio_dirty: bool,
    delay: Vec<DelayQueue>,
    reserved: Vec<u32>,
    undispatched: BTreeSet<TaskId>,
    outbox: Vec<(usize, TaskId)>,
    executing: Vec<u32>,
    mock_idle: Vec<u32>,
    attempt_start: Vec<f64>,
    attempt_finish: Vec<f64>,
    poll_pending: BTreeMap<OrderedFloat<f64>, Vec<TaskId>>,

    scale_due: bool,
    scale_changed: bool,
    reschedule_due: bool,
    /// Periodic re-scheduling runs once capacity has changed.
    reschedule_armed: bool,

    util: Vec<UtilizationSample>,
    last_util: Vec<(u32, u32)>,
    staging: Vec<StagingSample>,
    last_staging: usize,
    done_per_ep: Vec<usize>,
    first_submit: f64,
    last_observed: Option<f64>,
    overhead: Overhead,
    pass_wall: f64,
    dispatches: u64,
    new_records: Vec<TaskRecord>,
    failures: Vec<FailureReport>,
}

impl<'a> Engine<'a> {
    fn new(sc: &'a Scenario, cfg: &RunConfig) -> Result<Self, SimError> {
        sc.validate()?;
        let n = sc.endpoints.len();
        let ep_idx = sc.endpoint_index();
        let fn_idx = sc.function_index();
        let task_idx = sc.task_index();
        let network = sc.network_model();

        let mut dag = Dag::new();
        for f in &sc.functions {
            let mut def = FunctionDef::new(f.name.clone());
            def.resource_kind = f.resource_kind;
            if let Some(h) = &f.cost_hint {
                def = def.with_cost_hint(h.fixed_s, h.rate_s_per_mb / MB);
            }
            dag.add_function(def).map_err(internal)?;
        }

        let pool = EndpointPool::new(
            sc.endpoints
                .iter()
                .map(|e| EndpointModel::new(e.spec(), e.trace()))
                .collect(),
        );

        let backend: Box<dyn TransferBackend> = match cfg.file_transfer_type {
            FileTransferType::Simulated => Box::new(SimulatedBackend {
                network: network.clone(),
                failure_rate: cfg.transfer_failure_rate,
                seed: cfg.seed,
            }),
            FileTransferType::LocalCopy => Box::new(LocalCopyBackend {
                network: network.clone(),
                root: cfg.local_copy_root.clone().ok_or(SimError::MissingCopyRoot)?,
                endpoint_names: sc.endpoints.iter().map(|e| e.endpoint_id.clone()).collect(),
            }),
        };
        let mut dm = DataManager::new(backend, cfg.transfer_concurrency, cfg.max_transfer_retries);

        let profiles = sc
            .functions
            .iter()
            .map(|f| FunctionProfile {
                name: f.name.clone(),
                cost_hint: f.cost_hint.as_ref().map(|h| CostHint {
                    seconds_per_byte: h.rate_s_per_mb / MB,
                    fixed_seconds: h.fixed_s,
                }),
                declared: Some(DeclaredCost {
                    fixed_seconds: f.true_fixed_s,
                    seconds_per_byte: f.true_rate_s_per_mb / MB,
                    output_ratio: f.output_ratio,
                }),
            })
            .collect();
        let mut exec = ExecProfiler::new(profiles, sc.endpoints.iter().map(|e| e.spec()).collect());
        let mut loaded = 0usize;
        for rec in &cfg.history {
            match exec.record(rec.clone()) {
                Ok(()) => loaded += 1,
                Err(e) => log::warn!("skipping history record: {e}"),
            }
        }
        if loaded > 0 {
            exec.refresh();
            log::info!("loaded {loaded} history records");
        }
        let mut xfer = TransferProfiler::new(n, |s, d| network.link(s, d).copied());
        xfer.probe_size = cfg.probe_size;

        // Declared files become shared data items, one per data_id.
        let mut data_ids: BTreeMap<&str, DataId> = BTreeMap::new();
        let order = sc.submission_order();
        let mut rt = Vec::with_capacity(order.len());
        let mut entry_to_task = vec![0; sc.workflow.len()];
        for (pos, &(entry, _)) in order.iter().enumerate() {
            entry_to_task[entry] = pos;
        }
        for &(entry, _) in &order {
            let t = &sc.workflow[entry];
            let mut declared_inputs = Vec::new();
            for f in &t.file_deps {
                let id = *data_ids.entry(f.data_id.as_str()).or_insert_with(|| {
                    let locs = f.locations.iter().map(|l| ep_idx[l.as_str()]).collect();
                    dm.add_item(f.bytes(), locs, None)
                });
                declared_inputs.push(id);
            }
            rt.push(TaskRt {
                entry,
                function: fn_idx[t.function.as_str()],
                deps: t.deps.iter().map(|d| entry_to_task[task_idx[d.as_str()]]).collect(),
                declared_inputs,
                pin: t.endpoint.as_ref().map(|p| ep_idx[p.as_str()]),
                ..TaskRt::default()
            });
        }
        let mut arrivals: Vec<(f64, Range<usize>)> = Vec::new();
        for (pos, &(_, time)) in order.iter().enumerate() {
            match arrivals.last_mut() {
                Some((t, r)) if *t == time => r.end = pos + 1,
                _ => arrivals.push((time, pos..pos + 1)),
            }
        }
        let total = rt.len();
        Ok(Self {
            sc,
            cfg: cfg.clone(),
            n,
            dispatch_latency: network.dispatch_latency,
            dag,
            pool,
            dm,
            exec,
            xfer,
            queue: BinaryHeap::new(),
            seq: 0,
            now: 0.0,
            foreground: 0,
            hasher: DefaultHasher::new(),
            events: 0,
            rt,
            first_submit: arrivals.first().map_or(0.0, |a| a.0),
            arrivals,
            remaining: total,
            open_tasks: 0,
            open_assigned: vec![0; n],
            unrunnable: BTreeSet::new(),
            terminal_failed: BTreeSet::new(),
            placement: Vec::new(),
            locality_wait: Vec::new(),
            cap_plan: vec![None; total],
            priorities: PriorityTable::default(),
            prio_dirty: false,
            delay: vec![DelayQueue::new(); n],
            reserved: vec![0; n],
            undispatched: BTreeSet::new(),
            outbox: Vec::new(),
            executing: vec![0; n],
            mock_idle: vec![0; n],
            attempt_start: Vec::new(),
            attempt_finish: Vec::new(),
            poll_pending: BTreeMap::new(),
            scale_due: false,
            scale_changed: false,
            reschedule_due: false,
            reschedule_armed: false,
            util: Vec::new(),
            last_util: vec![(u32::MAX, u32::MAX); n],
            staging: Vec::new(),
            last_staging: usize::MAX,
            done_per_ep: vec![0; n],
            last_observed: None,
            overhead: Overhead::default(),
            pass_wall: 0.0,
            dispatches: 0,
            new_records: Vec::new(),
            failures: Vec::new(),
        })
    }

    fn push(&mut self, time: f64, ev: Ev) {
        if ev.foreground() {
            self.foreground += 1;
        }
        self.seq += 1;
        self.queue.push(Event {
            time,
            seq: self.seq,
            ev,
        });
    }

    fn finished(&self) -> bool {
        self.remaining == 0 && (!self.cfg.elasticity || self.pool.iter().all(|e| e.active_workers() == 0))
    }

    fn run(mut self) -> Result<MetricsLog, SimError> {
        self.bootstrap();
        self.sample();
        loop {
            if self.finished() {
                break;
            }
            let Some(t) = self.queue.peek().map(|e| e.time) else {
                return Err(self.deadlock());
            };
            self.now = t;
            while self.queue.peek().is_some_and(|e| e.time == t) {
                let Event { time, seq, ev } = self.queue.pop().expect("peeked");
                if ev.foreground() {
                    self.foreground -= 1;
                }
                self.events += 1;
                time.to_bits().hash(&mut self.hasher);
                seq.hash(&mut self.hasher);
                ev.hash_into(&mut self.hasher);
                self.handle(ev)?;
            }
            self.pass()?;
        }
        Ok(self.finish())
    }

    fn bootstrap(&mut self) {
        for g in 0..self.arrivals.len() {
            let time = self.arrivals[g].0;
            self.push(time, Ev::Arrival(g));
        }
        for e in 0..self.n {
            let trace = self.pool.get(e).capacity_trace.clone();
            for c in trace {
                self.push(
                    c.time,
                    Ev::Capacity {
                        endpoint: e,
                        delta: c.delta_workers,
                    },
                );
            }
        }
        if self.rt.is_empty() {
            return;
        }
        self.push(self.cfg.refresh_interval, Ev::RefreshTick);
        if self.cfg.elasticity {
            self.push(0.0, Ev::ScaleTick);
        }
        if self.cfg.sync_lag > 0.0 {
            self.sync_snapshot();
            self.push(self.cfg.sync_lag, Ev::SyncTick);
        }
        if self.cfg.probe_on_init && self.n > 1 {
            for s in 0..self.n {
                for d in 0..self.n {
                    if s != d && self.xfer.needs_probe(s, d) {
                        let (_, started) = self.dm.probe(s, d, self.cfg.probe_size, 0.0);
                        self.schedule_started(started);
                    }
                }
            }
        }
    }

    fn sync_snapshot(&mut self) -> bool {
        let fresh: Vec<u32> = self.pool.iter().map(|e| e.idle_workers()).collect();
        let changed = fresh != self.mock_idle;
        self.mock_idle = fresh;
        changed
    }

    fn idle_view(&self, e: usize) -> u32 {
        if self.cfg.sync_lag > 0.0 {
            self.mock_idle[e]
        } else {
            self.pool.get(e).idle_workers()
        }
    }

    /// Re-schedules at once, then every period while work is in flight.
    fn capacity_changed(&mut self) {
        if self.cfg.scheduler != SchedulerKind::Dha || !self.cfg.reschedule {
            return;
        }
        self.reschedule_due = true;
        if !self.reschedule_armed {
            self.reschedule_armed = true;
            self.push(self.now + self.cfg.reschedule_period, Ev::RescheduleTick);
        }
    }

    fn schedule_started(&mut self, started: Vec<Started>) {
        for s in started {
            if self.attempt_start.len() <= s.job {
                self.attempt_start.resize(s.job + 1, 0.0);
                self.attempt_finish.resize(s.job + 1, 0.0);
            }
            self.attempt_start[s.job] = self.now;
            self.attempt_finish[s.job] = s.finish_time;
            self.push(s.finish_time, Ev::Transfer(s.job));
        }
    }

    fn handle(&mut self, ev: Ev) -> Result<(), SimError> {
        let now = self.now;
        match ev {
            Ev::Arrival(g) => self.on_arrival(g)?,
            Ev::Capacity { endpoint, delta } => {
                let (active, started) = self.pool.get_mut(endpoint).apply_capacity_event(delta, now);
                log::debug!("t={now:.3} endpoint {endpoint} capacity {delta:+} -> {active}");
                self.start_arrived(endpoint, started)?;
                self.capacity_changed();
            }
            Ev::Submit { endpoint, tasks } => {
                for t in tasks {
                    self.rt[t].arrived = Some(now);
                    if self.pool.get(endpoint).is_running(t) && self.rt[t].started.is_none() {
                        self.start(t, endpoint)?;
                    }
                }
            }
            Ev::Complete { task, endpoint } => {
                self.executing[endpoint] -= 1;
                self.rt[task].finished = Some(now);
                let next = self.pool.get_mut(endpoint).complete(task, now).map_err(internal)?;
                if let Some(next) = next {
                    self.start_arrived(endpoint, vec![next])?;
                }
                let tick = poll_tick(now, self.cfg.poll_interval);
                let list = self.poll_pending.entry(OrderedFloat(tick)).or_default();
                list.push(task);
                if list.len() == 1 {
                    self.push(tick, Ev::Poll);
                }
            }
            Ev::Poll => {
                let tasks = self.poll_pending.remove(&OrderedFloat(now)).unwrap_or_default();
                for t in tasks {
                    self.observe_done(t)?;
                }
            }
            Ev::Transfer(job) => self.on_transfer(job)?,
            Ev::ScaleTick => self.scale_due = true,
            Ev::RefreshTick => {
                let refits = self.exec.refresh() + self.xfer.refresh();
                if refits > 0 {
                    self.prio_dirty = true;
                }
                if self.foreground > 0 {
                    self.push(now + self.cfg.refresh_interval, Ev::RefreshTick);
                }
            }
            Ev::RescheduleTick => {
                self.reschedule_due = true;
                if self.foreground > 0 {
                    self.push(now + self.cfg.reschedule_period, Ev::RescheduleTick);
                } else {
                    self.reschedule_armed = false;
                }
            }
            Ev::SyncTick => {
                let changed = self.sync_snapshot();
                if self.foreground > 0 || changed {
                    self.push(now + self.cfg.sync_lag, Ev::SyncTick);
                }
            }
        }
        Ok(())
    }

    fn on_arrival(&mut self, g: usize) -> Result<(), SimError> {
        let range = self.arrivals[g].1.clone();
        let mut batch = Vec::new();
        for t in range {
            let r = &self.rt[t];
            let entry = &self.sc.workflow[r.entry];
            let id = self
                .dag
                .submit_task(r.function, &r.deps, &r.declared_inputs, entry.inline_args_b)
                .map_err(internal)?;
            debug_assert_eq!(id, t);
            self.rt[t].submitted = Some(self.now);
            self.open_tasks += 1;
            let doomed = self.rt[t]
                .deps
                .iter()
                .any(|d| self.terminal_failed.contains(d) || self.unrunnable.contains(d));
            if doomed {
                self.mark_unrunnable(t);
                continue;
            }
            if self.dag.node(t).deps_satisfied() {
                self.deps_satisfied(t);
            }
            if self.rt[t].pin.is_none() {
                batch.push(t);
            }
        }
        match self.cfg.scheduler {
            SchedulerKind::Capacity if !batch.is_empty() => {
                let clock = Instant::now();
                let wanted: BTreeSet<TaskId> = batch.iter().copied().collect();
                let order: Vec<TaskId> = self.dag.dfs_order().into_iter().filter(|t| wanted.contains(t)).collect();
                let mut caps: Vec<u64> = self.pool.iter().map(|e| e.active_workers() as u64).collect();
                if caps.iter().all(|&c| c == 0) {
                    caps = self.pool.iter().map(|e| e.spec.max_workers() as u64).collect();
                }
                let plan = capacity_assign(&order, &caps).map_err(internal)?;
                for (t, e) in plan {
                    self.cap_plan[t] = Some(e);
                }
                self.overhead.wall_seconds += clock.elapsed().as_secs_f64();
            }
            SchedulerKind::Dha => self.prio_dirty = true,
            _ => {}
        }
        Ok(())
    }

    fn deps_satisfied(&mut self, t: TaskId) {
        self.rt[t].deps_done = Some(self.now);
        self.placement.push(t);
    }

    fn mark_unrunnable(&mut self, t: TaskId) {
        if self.unrunnable.insert(t) {
            self.remaining -= 1;
            if self.rt[t].submitted.is_some() {
                self.open_tasks -= 1;
            }
        }
    }

    fn inputs(&self, t: TaskId) -> Vec<DataId> {
        let mut v = self.rt[t].declared_inputs.clone();
        for &d in &self.rt[t].deps {
            if let Some(out) = self.dag.node(d).output {
                v.push(out);
            }
        }
        v.sort_unstable();
        v.dedup();
        v
    }

    fn bytes_of(&self, inputs: &[DataId]) -> u64 {
        inputs.iter().map(|&d| self.dm.item(d).size).sum()
    }

    fn start_arrived(&mut self, e: usize, started: Vec<TaskId>) -> Result<(), SimError> {
        for t in started {
            if self.rt[t].arrived.is_some() && self.rt[t].started.is_none() {
                self.start(t, e)?;
            }
        }
        Ok(())
    }

    fn start(&mut self, t: TaskId, e: usize) -> Result<(), SimError> {
        self.dag.transition(t, TaskState::Running).map_err(internal)?;
        self.rt[t].started = Some(self.now);
        self.executing[e] += 1;
        let f = &self.sc.functions[self.rt[t].function];
        let d = sample_exec_duration(
            f,
            self.sc.endpoints[e].perf_factor,
            self.rt[t].input_bytes,
            self.cfg.seed,
            t,
            self.dag.node(t).attempt_count,
        );
        self.rt[t].exec_duration = d;
        self.push(self.now + d, Ev::Complete { task: t, endpoint: e });
        Ok(())
    }

    fn observe_done(&mut self, t: TaskId) -> Result<(), SimError> {
        self.dag.transition(t, TaskState::Done).map_err(internal)?;
        let e = self.rt[t].endpoint.expect("done task has an endpoint");
        self.rt[t].observed = Some(self.now);
        self.last_observed = Some(self.now);
        self.done_per_ep[e] += 1;
        self.open_assigned[e] -= 1;
        self.open_tasks -= 1;
        self.remaining -= 1;

        let f = &self.sc.functions[self.rt[t].function];
        let out = (f.output_ratio * self.rt[t].input_bytes as f64).round() as u64;
        if out > 0 {
            let id = self.dm.add_item(out, BTreeSet::from([e]), Some(t));
            self.dag.set_output(t, id);
        }
        let rec = TaskRecord {
            function: f.name.clone(),
            endpoint: self.sc.endpoints[e].endpoint_id.clone(),
            input_size: self.rt[t].input_bytes,
            exec_time: self.rt[t].exec_duration,
            output_size: out,
            success: true,
            timestamp: self.rt[t].finished.unwrap_or(self.now),
        };
        self.exec.record(rec.clone()).map_err(internal)?;
        self.new_records.push(rec);

        let succ: Vec<TaskId> = self.dag.successors(t).iter().copied().collect();
        for s in succ {
            if self.unrunnable.contains(&s) {
                continue;
            }
            match self.dag.on_dep_complete(s) {
                Readiness::DepsSatisfied => self.deps_satisfied(s),
                Readiness::Ready => self.on_staged(s)?,
                Readiness::Waiting | Readiness::Ignored => {}
            }
        }
        Ok(())
    }

    fn on_transfer(&mut self, job: JobId) -> Result<(), SimError> {
        let (src, dst, size, probe) = {
            let j = self.dm.job(job);
            (j.src, j.dst, j.size, j.is_probe())
        };
        let (latency, concurrent) = self.dm.attempt_shape(job);
        match self.dm.on_transfer_finished(job, self.now) {
            FinishOutcome::Done { waiters, started } => {
                self.xfer.observe(
                    src,
                    dst,
                    TransferObservation {
                        size,
                        concurrent,
                        latency,
                        duration: self.now - self.attempt_start[job],
                    },
                );
                self.schedule_started(started);
                for w in waiters {
                    self.rt[w].jobs.retain(|&j| j != job);
                    if self.dag.on_staging_progress(w) {
                        self.on_staged(w)?;
                    }
                }
            }
            FinishOutcome::Retried { retry } => self.schedule_started(vec![retry]),
            FinishOutcome::Failed { waiters, started } => {
                self.schedule_started(started);
                if probe {
                    log::warn!("probe {src} -> {dst} failed; pair has no transfer estimate");
                    self.xfer.mark_probe_failed(src, dst);
                }
                let reason = format!(
                    "transfer of {size} bytes from {} to {} failed after {} retries",
                    self.sc.endpoints[src].endpoint_id,
                    self.sc.endpoints[dst].endpoint_id,
                    self.cfg.max_transfer_retries
                );
                for w in waiters {
                    self.fail_task(w, &reason)?;
                }
            }
        }
        Ok(())
    }

    fn fail_task(&mut self, t: TaskId, reason: &str) -> Result<(), SimError> {
        let e = self.rt[t].endpoint.expect("staging task has an endpoint");
        for j in std::mem::take(&mut self.rt[t].jobs) {
            self.dm.unsubscribe(t, j);
        }
        self.dag.transition(t, TaskState::Failed).map_err(internal)?;
        self.undispatched.remove(&t);
        self.delay[e].remove(t);
        self.open_assigned[e] -= 1;
        if self.cfg.scheduler == SchedulerKind::Locality {
            self.reserved[e] = self.reserved[e].saturating_sub(1);
        }
        self.rt[t].endpoint = None;
        self.rt[t].forced = None;
        self.dag.set_assigned(t, None);
        let attempts = self.dag.bump_attempts(t);
        self.rt[t].failed_on.push(e);
        self.rt[t]
            .errors
            .push(format!("attempt {attempts} on {}: {reason}", self.sc.endpoints[e].endpoint_id));
        log::warn!("task {} attempt {attempts} failed: {reason}", self.sc.workflow[self.rt[t].entry].id);

        let f = &self.sc.functions[self.rt[t].function];
        let rec = TaskRecord {
            function: f.name.clone(),
            endpoint: self.sc.endpoints[e].endpoint_id.clone(),
            input_size: self.rt[t].input_bytes,
            exec_time: 0.0,
            output_size: 0,
            success: false,
            timestamp: self.now,
        };
        self.exec.record(rec.clone()).map_err(internal)?;
        self.new_records.push(rec);

        let rates = self.exec.success_rates(self.rt[t].function);
        let plan = match reassign_failed(&self.rt[t].failed_on, &rates, self.cfg.max_task_attempts) {
            RetryPlan::Terminal => RetryPlan::Terminal,
            // endpoints that can never host work are skipped
            plan => {
                let untried: Vec<usize> = (0..self.pool.len())
                    .filter(|i| !self.rt[t].failed_on.contains(i) && self.can_ever_run(*i))
                    .collect();
                match plan {
                    _ if untried.is_empty() => RetryPlan::Terminal,
                    RetryPlan::Endpoint(e) if !untried.contains(&e) => {
                        let best = untried.iter().copied().fold(untried[0], |b, i| if rates[i] > rates[b] { i } else { b });
                        RetryPlan::Endpoint(best)
                    }
                    plan => plan,
                }
            }
        };
        match plan {
            RetryPlan::Terminal => {
                self.terminal_failed.insert(t);
                self.remaining -= 1;
                self.open_tasks -= 1;
                self.failures.push(FailureReport {
                    task: self.sc.workflow[self.rt[t].entry].id.clone(),
                    attempts,
                    failed_on: self.rt[t]
                        .failed_on
                        .iter()
                        .map(|&i| self.sc.endpoints[i].endpoint_id.clone())
                        .collect(),
                    errors: self.rt[t].errors.clone(),
                });
                for d in self.dag.descendants(t) {
                    if !self.dag.state(d).is_terminal() {
                        self.mark_unrunnable(d);
                    }
                }
            }
            RetryPlan::UseScheduler => self.placement.push(t),
            RetryPlan::Endpoint(target) => {
                self.rt[t].forced = Some(target);
                self.placement.push(t);
            }
        }
        Ok(())
    }

    /// Whether `e` has workers now or can still gain some.
    fn can_ever_run(&self, e: usize) -> bool {
        let ep = self.pool.get(e);
        ep.active_workers() > 0
            || (self.cfg.elasticity && ep.spec.max_workers() > 0)
            || ep.capacity_trace.iter().any(|c| c.time >= self.now && c.delta_workers > 0)
    }

    /// Binds `t` to `e` and starts staging its inputs there.
    fn assign(&mut self, t: TaskId, e: usize) -> Result<(), SimError> {
        let inputs = self.inputs(t);
        self.rt[t].input_bytes = self.bytes_of(&inputs);
        self.rt[t].endpoint = Some(e);
        if self.rt[t].predicted_exec == 0.0 {
            self.rt[t].predicted_exec = self
                .exec
                .predict_exec(self.rt[t].function, e, self.rt[t].input_bytes)
                .seconds;
        }
        self.dag.set_assigned(t, Some(e));
        self.open_assigned[e] += 1;
        self.undispatched.insert(t);
        self.overhead.decisions += 1;
        let res = self.dm.stage(t, e, &inputs, self.now);
        self.schedule_started(res.started);
        self.rt[t].jobs = res.waiting_on;
        let ready = self.dag.begin_staging(t, self.rt[t].jobs.len()).map_err(internal)?;
        if ready {
            self.on_staged(t)?;
        }
        Ok(())
    }

    fn on_staged(&mut self, t: TaskId) -> Result<(), SimError> {
        let e = self.rt[t].endpoint.expect("staged task has an endpoint");
        self.rt[t].staged = Some(self.now);
        match self.cfg.scheduler {
            SchedulerKind::Capacity => self.dispatch(t),
            SchedulerKind::Locality => {
                self.reserved[e] = self.reserved[e].saturating_sub(1);
                self.dispatch(t)
            }
            SchedulerKind::Dha => {
                self.delay[e].insert(t, self.priorities.get(t));
                Ok(())
            }
        }
    }

    fn dispatch(&mut self, t: TaskId) -> Result<(), SimError> {
        let e = self.rt[t].endpoint.expect("dispatched task has an endpoint");
        self.dag.transition(t, TaskState::Queued).map_err(internal)?;
        self.undispatched.remove(&t);
        self.pool.get_mut(e).dispatch(t, self.now);
        self.rt[t].dispatched = Some(self.now);
        self.mock_idle[e] = self.mock_idle[e].saturating_sub(1);
        self.outbox.push((e, t));
        self.dispatches += 1;
        Ok(())
    }

    fn pass(&mut self) -> Result<(), SimError> {
        self.pass_wall = 0.0;
        match self.cfg.scheduler {
            SchedulerKind::Capacity => self.place_capacity()?,
            SchedulerKind::Locality => self.place_locality()?,
            SchedulerKind::Dha => self.place_dha()?,
        }
        if self.scale_due {
            self.scale()?;
        }
        if self.cfg.scheduler == SchedulerKind::Dha {
            if self.reschedule_due && self.cfg.reschedule {
                self.reschedule()?;
            }
            self.reschedule_due = false;
            for e in 0..self.n {
                let idle = self.idle_view(e);
                if idle == 0 || self.delay[e].is_empty() {
                    continue;
                }
                let clock = Instant::now();
                let picked = delay_dispatch(&mut self.delay[e], idle);
                self.charge(clock);
                for t in picked {
                    self.dispatch(t)?;
                }
            }
        }
        self.flush_outbox();
        self.sample();
        Ok(())
    }

    fn charge(&mut self, clock: Instant) {
        let s = clock.elapsed().as_secs_f64();
        self.overhead.wall_seconds += s;
        self.pass_wall += s;
    }

    fn flush_outbox(&mut self) {
        if self.outbox.is_empty() {
            return;
        }
        let mut per_ep: BTreeMap<usize, Vec<TaskId>> = BTreeMap::new();
        for (e, t) in std::mem::take(&mut self.outbox) {
            per_ep.entry(e).or_default().push(t);
        }
        let at = self.now + self.dispatch_latency + self.pass_wall * self.cfg.sched_time_factor;
        for (e, tasks) in per_ep {
            for r in batch_boundaries(tasks.len(), self.cfg.batch_size) {
                self.push(
                    at,
                    Ev::Submit {
                        endpoint: e,
                        tasks: tasks[r].to_vec(),
                    },
                );
            }
        }
    }

    fn sample(&mut self) {
        for e in 0..self.n {
            let cur = (self.executing[e], self.pool.get(e).active_workers());
            if cur != self.last_util[e] {
                self.last_util[e] = cur;
                self.util.push(UtilizationSample {
                    time: self.now,
                    endpoint: e,
                    busy: cur.0,
                    active: cur.1,
                });
            }
        }
        let staging = self
            .undispatched
            .iter()
            .filter(|&&t| self.dag.state(t) == TaskState::Staging)
            .count();
        if staging != self.last_staging {
            self.last_staging = staging;
            self.staging.push(StagingSample {
                time: self.now,
                tasks_in_staging: staging,
            });
        }
    }

    fn place_capacity(&mut self) -> Result<(), SimError> {
        for t in std::mem::take(&mut self.placement) {
            let r = &self.rt[t];
            let e = r.forced.or(r.pin).or(self.cap_plan[t]).unwrap_or(0);
            self.assign(t, e)?;
        }
        Ok(())
    }

    fn place_locality(&mut self) -> Result<(), SimError> {
        self.locality_wait.append(&mut self.placement);
        if self.locality_wait.is_empty() {
            return Ok(());
        }
        let mut idle: Vec<u32> = (0..self.n)
            .map(|e| self.idle_view(e).saturating_sub(self.reserved[e]))
            .collect();
        let mut keep = Vec::new();
        for t in std::mem::take(&mut self.locality_wait) {
            if idle.iter().all(|&i| i == 0) {
                keep.push(t);
                continue;
            }
            let clock = Instant::now();
            let choice = match self.rt[t].forced.or(self.rt[t].pin) {
                Some(p) => (idle[p] > 0).then_some(p),
                None => {
                    let inputs = self.inputs(t);
                    let views: Vec<LocalityView> = (0..self.n)
                        .map(|e| LocalityView {
                            idle_workers: idle[e],
                            missing_bytes: self.dm.missing_bytes(&inputs, e),
                        })
                        .collect();
                    locality_select(&views)
                }
            };
            self.charge(clock);
            match choice {
                Some(e) => {
                    idle[e] -= 1;
                    self.reserved[e] += 1;
                    self.assign(t, e)?;
                }
                None => keep.push(t),
            }
        }
        self.locality_wait = keep;
        Ok(())
    }

    fn recompute_priorities(&mut self) -> Result<(), SimError> {
        // Predicted input sizes, in id order so deps come first.
        let m = self.dag.len();
        let mut pred_in = vec![0u64; m];
        let mut pred_out = vec![0f64; m];
        for t in 0..m {
            let mut bytes: u64 = self.rt[t].declared_inputs.iter().map(|&d| self.dm.item(d).size).sum();
            for &d in &self.rt[t].deps {
                let node = self.dag.node(d);
                bytes += match node.output {
                    Some(o) => self.dm.item(o).size,
                    None if node.state == TaskState::Done => 0,
                    None => pred_out[d].round() as u64,
                };
            }
            pred_in[t] = bytes;
            pred_out[t] = self.exec.predict_exec_quiet(self.rt[t].function, 0, bytes).output_bytes;
        }
        let (exec, xfer, rt, n) = (&self.exec, &self.xfer, &self.rt, self.n);
        self.priorities = compute_priorities(&self.dag, |t| average_costs(exec, xfer, rt[t].function, pred_in[t], n))
            .map_err(internal)?;
        self.prio_dirty = false;
        Ok(())
    }

    fn slots(&self, e: usize) -> u32 {
        let ep = self.pool.get(e);
        if self.cfg.elasticity && ep.active_workers() == 0 {
            ep.spec.max_workers()
        } else {
            ep.active_workers()
        }
    }

    /// Predicted worker availability per endpoint: tasks already sent, and
    /// optionally the ones placed but still on the client.
    fn availability(&self, with_undispatched: bool) -> Vec<Availability> {
        let mut out: Vec<Availability> = (0..self.n)
            .map(|e| {
                let ep = self.pool.get(e);
                let finishes: Vec<f64> = ep
                    .running()
                    .iter()
                    .map(|&t| {
                        let r = &self.rt[t];
                        let start = r
                            .started
                            .unwrap_or(r.dispatched.unwrap_or(self.now) + self.dispatch_latency);
                        start + r.predicted_exec
                    })
                    .collect();
                let mut a = Availability::new(self.now, self.slots(e), &finishes);
                for &t in ep.queued() {
                    let at = a.earliest().max(self.now);
                    if at.is_finite() {
                        a.commit(at + self.rt[t].predicted_exec);
                    }
                }
                a
            })
            .collect();
        if with_undispatched {
            let mut waiting: Vec<TaskId> = self.undispatched.iter().copied().collect();
            waiting.sort_by(|a, b| self.priorities.get(*b).total_cmp(&self.priorities.get(*a)).then(a.cmp(b)));
            for t in waiting {
                let r = &self.rt[t];
                let e = r.endpoint.expect("placed task");
                let at = a_max(r.expected_ready, self.now, out[e].earliest());
                if at.is_finite() {
                    out[e].commit(at + r.predicted_exec);
                }
            }
        }
        out
    }

    fn transfer_estimate(&self, data: DataId, dst: usize) -> f64 {
        if self.dm.is_resident(data, dst) {
            return 0.0;
        }
        if let Some(j) = self.dm.in_flight(data, dst) {
            let job = self.dm.job(j);
            if job.state == JobState::Active {
                return (self.attempt_finish[j] - self.now).max(0.0);
            }
            return self
                .xfer
                .predict_transfer(job.src, dst, job.size, self.dm.active_on(job.src, dst) + 1);
        }
        let item = self.dm.item(data);
        item.locations
            .iter()
            .map(|&s| {
                self.xfer
                    .predict_transfer(s, dst, item.size, self.dm.active_on(s, dst) + 1)
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn staging_estimate(&self, inputs: &[DataId], dst: usize) -> f64 {
        inputs.iter().map(|&d| self.transfer_estimate(d, dst)).sum()
    }

    fn place_dha(&mut self) -> Result<(), SimError> {
        if self.placement.is_empty() {
            return Ok(());
        }
        let clock = Instant::now();
        if self.prio_dirty {
            self.recompute_priorities()?;
        }
        let mut tasks = std::mem::take(&mut self.placement);
        tasks.sort_by(|a, b| self.priorities.get(*b).total_cmp(&self.priorities.get(*a)).then(a.cmp(b)));
        let mut avail = self.availability(true);
        self.charge(clock);
        for t in tasks {
            let clock = Instant::now();
            let inputs = self.inputs(t);
            let bytes = self.bytes_of(&inputs);
            let staging: Vec<f64> = (0..self.n).map(|e| self.staging_estimate(&inputs, e)).collect();
            let exec: Vec<f64> = (0..self.n)
                .map(|e| self.exec.predict_exec(self.rt[t].function, e, bytes).seconds)
                .collect();
            let (e, finish) = match self.rt[t].forced.or(self.rt[t].pin) {
                Some(p) => (p, eft(self.now, staging[p], &avail[p], exec[p])),
                None => dha_select_endpoint(self.now, &staging, &exec, &avail),
            };
            if finish.is_finite() {
                avail[e].commit(finish);
            }
            self.rt[t].expected_ready = self.now + staging[e];
            self.rt[t].predicted_exec = exec[e];
            self.charge(clock);
            self.assign(t, e)?;
        }
        Ok(())
    }

    fn reschedule(&mut self) -> Result<(), SimError> {
        let clock = Instant::now();
        if self.prio_dirty {
            self.recompute_priorities()?;
        }
        let mut avail = self.availability(false);
        let mut candidates = Vec::new();
        let mut staging_of: BTreeMap<TaskId, Vec<f64>> = BTreeMap::new();
        let mut exec_of: BTreeMap<TaskId, Vec<f64>> = BTreeMap::new();
        for &t in &self.undispatched {
            let r = &self.rt[t];
            if r.pin.is_some() || r.forced.is_some() {
                continue;
            }
            let inc = r.endpoint.expect("placed task");
            let inputs = self.inputs(t);
            let staging: Vec<f64> = (0..self.n).map(|e| self.staging_estimate(&inputs, e)).collect();
            let exec: Vec<f64> = (0..self.n)
                .map(|e| self.exec.predict_exec_quiet(r.function, e, r.input_bytes).seconds)
                .collect();
            let switch_cost: Vec<f64> = (0..self.n)
                .map(|e| {
                    if e == inc {
                        return 0.0;
                    }
                    inputs
                        .iter()
                        .filter(|&&d| {
                            (self.dm.is_resident(d, inc) || self.dm.in_flight(d, inc).is_some())
                                && !self.dm.is_resident(d, e)
                        })
                        .map(|&d| self.xfer.predict_transfer(inc, e, self.dm.item(d).size, 1))
                        .sum()
                })
                .collect();
            staging_of.insert(t, staging.clone());
            exec_of.insert(t, exec.clone());
            candidates.push(StealCandidate {
                task: t,
                priority: self.priorities.get(t),
                incumbent: inc,
                staging,
                exec,
                switch_cost,
            });
        }
        let moves = dha_reschedule(self.now, candidates, &mut avail);
        self.charge(clock);
        for m in &moves {
            let t = m.task;
            log::debug!(
                "t={:.3} move task {t} {} -> {} (eft {:.2} -> {:.2})",
                self.now,
                m.from,
                m.to,
                m.eft_before,
                m.eft_after
            );
            self.delay[m.from].remove(t);
            for j in std::mem::take(&mut self.rt[t].jobs) {
                self.dm.unsubscribe(t, j);
            }
            self.open_assigned[m.from] -= 1;
            self.open_assigned[m.to] += 1;
            self.rt[t].endpoint = Some(m.to);
            self.rt[t].expected_ready = self.now + staging_of[&t][m.to];
            self.rt[t].predicted_exec = exec_of[&t][m.to];
            self.dag.set_assigned(t, Some(m.to));
            let inputs = self.inputs(t);
            let res = self.dm.stage(t, m.to, &inputs, self.now);
            self.schedule_started(res.started);
            self.rt[t].jobs = res.waiting_on;
            if self.dag.restage(t, self.rt[t].jobs.len()).map_err(internal)? {
                self.rt[t].staged = Some(self.now);
                self.delay[m.to].insert(t, self.priorities.get(t));
            }
        }
        Ok(())
    }

    fn scale(&mut self) -> Result<(), SimError> {
        self.scale_due = false;
        if !self.cfg.elasticity {
            return Ok(());
        }
        let assigned: u64 = self.open_assigned.iter().sum();
        let unassigned = (self.open_tasks as u64).saturating_sub(assigned);
        let maxes: Vec<u64> = self.pool.iter().map(|e| e.spec.max_workers() as u64).collect();
        let shares = if unassigned > 0 && maxes.iter().any(|&m| m > 0) {
            capacity_partition(unassigned as usize, &maxes).map_err(internal)?
        } else {
            vec![0; self.n]
        };
        let views: Vec<ScaleView> = (0..self.n)
            .map(|e| {
                let ep = self.pool.get(e);
                let idle = ep.busy_workers() == 0 && ep.queued().is_empty();
                ScaleView {
                    workers_per_node: ep.spec.workers_per_node,
                    max_nodes: ep.spec.max_nodes,
                    active_workers: ep.active_workers(),
                    queue_share: self.open_assigned[e] + shares[e] as u64,
                    idle_for: idle.then_some(self.now - ep.last_busy_time),
                    idle_timeout: ep.spec.idle_timeout,
                }
            })
            .collect();
        let decisions = scale_decision(self.open_tasks as u64, &views);
        self.scale_changed = !decisions.is_empty();
        for (e, delta) in decisions {
            let started = self.pool.get_mut(e).scale_nodes(delta, self.now);
            log::debug!(
                "t={:.3} scale {} by {delta:+} nodes -> {} workers",
                self.now,
                self.sc.endpoints[e].endpoint_id,
                self.pool.get(e).active_workers()
            );
            self.start_arrived(e, started)?;
            self.capacity_changed();
        }
        let any_active = self.pool.iter().any(|e| e.active_workers() > 0);
        if !self.finished() && (self.foreground > 0 || self.scale_changed || any_active) {
            let next = ((self.now / self.cfg.scale_interval).round() + 1.0) * self.cfg.scale_interval;
            self.push(next, Ev::ScaleTick);
        }
        Ok(())
    }

    fn deadlock(&self) -> SimError {
        let stuck: Vec<TaskId> = (0..self.rt.len())
            .filter(|&t| {
                !self.unrunnable.contains(&t)
                    && !self.terminal_failed.contains(&t)
                    && self.dag.get(t).is_none_or(|n| n.state != TaskState::Done)
            })
            .collect();
        let mut detail = String::new();
        for &t in stuck.iter().take(20) {
            let r = &self.rt[t];
            let state = self.dag.get(t).map_or("UNSUBMITTED".to_string(), |n| n.state.to_string());
            let ep = r
                .endpoint
                .map_or("unassigned".to_string(), |e| self.sc.endpoints[e].endpoint_id.clone());
            detail.push_str(&format!(
                "  task {} ({}): {state}, {ep}\n",
                self.sc.workflow[r.entry].id, self.sc.functions[r.function].name
            ));
        }
        if stuck.len() > 20 {
            detail.push_str(&format!("  ... and {} more\n", stuck.len() - 20));
        }
        for e in self.pool.iter() {
            detail.push_str(&format!(
                "  endpoint {}: {} active, {} busy, {} queued\n",
                e.id(),
                e.active_workers(),
                e.busy_workers(),
                e.queued().len()
            ));
        }
        SimError::Deadlock {
            time: self.now,
            count: stuck.len(),
            detail,
        }
    }

    fn finish(self) -> MetricsLog {
        let tasks: Vec<TaskMetrics> = self
            .rt
            .iter()
            .enumerate()
            .map(|(t, r)| {
                let node = self.dag.get(t);
                TaskMetrics {
                    task: self.sc.workflow[r.entry].id.clone(),
                    function: self.sc.functions[r.function].name.clone(),
                    endpoint: node
                        .and_then(|n| n.assigned_endpoint)
                        .map(|e| self.sc.endpoints[e].endpoint_id.clone()),
                    state: node.map_or(TaskState::Pending, |n| n.state),
                    unrunnable: self.unrunnable.contains(&t),
                    attempts: node.map_or(0, |n| n.attempt_count),
                    submitted: r.submitted,
                    deps_done: r.deps_done,
                    staged: r.staged,
                    dispatched: r.dispatched,
                    started: r.started,
                    finished: r.finished,
                    observed: r.observed,
                }
            })
            .collect();
        MetricsLog {
            scenario: self.sc.name.clone(),
            scheduler: self.cfg.scheduler,
            seed: self.cfg.seed,
            endpoints: self.sc.endpoints.iter().map(|e| e.endpoint_id.clone()).collect(),
            makespan: self.last_observed.map_or(0.0, |t| t - self.first_submit),
            transfer_bytes: self.dm.transfer_bytes_total(),
            tasks_total: self.rt.len(),
            tasks_done: self.done_per_ep.iter().sum(),
            tasks_failed: self.terminal_failed.len(),
            tasks_unrunnable: self.unrunnable.len(),
            tasks_per_endpoint: self.done_per_ep.clone(),
            utilization: self.util,
            staging: self.staging,
            transfers: self.dm.log().to_vec(),
            tasks,
            failures: self.failures,
            overhead: self.overhead,
            events: self.events,
            dispatches: self.dispatches,
            trace_hash: self.hasher.finish(),
            new_records: self.new_records,
        }
    }
}

fn a_max(a: f64, b: f64, c: f64) -> f64 {
    a.max(b).max(c)
}
