//! Compute endpoints: elastic worker pools with a FIFO task queue.
//!
//! An [`EndpointModel`] is the client-side mirror of a remote endpoint. In
//! simulation the mirror and the endpoint it stands for are the same object.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dag::TaskId;

#[derive(Debug, Error, PartialEq)]
pub enum EndpointError {
    #[error("unknown endpoint `{0}`")]
    UnknownEndpoint(String),
    #[error("task {task} is not running on endpoint `{endpoint}`")]
    NotRunning { task: TaskId, endpoint: String },
    #[error("endpoint `{endpoint}`: {reason}")]
    InvalidSpec { endpoint: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointSpec {
    pub endpoint_id: String,
    pub cores_per_worker: u32,
    /// GHz.
    pub cpu_freq: f64,
    /// GB.
    pub ram: f64,
    pub workers_per_node: u32,
    pub max_nodes: u32,
    pub initial_nodes: u32,
    /// Seconds a fully idle endpoint waits before releasing its nodes.
    pub idle_timeout: f64,
    /// Multiplier on execution time; below 1 is faster hardware.
    pub perf_factor: f64,
}

impl EndpointSpec {
    pub fn max_workers(&self) -> u32 {
        self.workers_per_node * self.max_nodes
    }

    pub fn initial_workers(&self) -> u32 {
        self.workers_per_node * self.initial_nodes
    }

    pub fn validate(&self) -> Result<(), EndpointError> {
        let bad = |reason: &str| {
            Err(EndpointError::InvalidSpec {
                endpoint: self.endpoint_id.clone(),
                reason: reason.to_string(),
            })
        };
        if self.workers_per_node == 0 {
            return bad("workers_per_node must be positive");
        }
        if self.max_nodes == 0 {
            return bad("max_nodes must be positive");
        }
        if self.initial_nodes > self.max_nodes {
            return bad("initial_nodes exceeds max_nodes");
        }
        if self.idle_timeout.is_nan() || self.idle_timeout <= 0.0 {
            return bad("idle_timeout must be positive");
        }
        if self.perf_factor <= 0.0 || !self.perf_factor.is_finite() {
            return bad("perf_factor must be positive");
        }
        if self.cpu_freq < 0.0 || self.ram < 0.0 {
            return bad("hardware features must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacityEvent {
    pub time: f64,
    pub delta_workers: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DispatchOutcome {
    Accepted,
    Queued,
}

#[derive(Debug, Clone)]
pub struct EndpointModel {
    pub spec: EndpointSpec,
    active_workers: u32,
    busy_workers: u32,
    queued: VecDeque<TaskId>,
    running: BTreeSet<TaskId>,
    /// Workers still owed to a capacity reduction; retired as they free up.
    pending_reduction: u32,
    pub last_busy_time: f64,
    pub capacity_trace: Vec<CapacityEvent>,
}

impl EndpointModel {
    pub fn new(spec: EndpointSpec, capacity_trace: Vec<CapacityEvent>) -> Self {
        let active = spec.initial_workers();
        Self {
            spec,
            active_workers: active,
            busy_workers: 0,
            queued: VecDeque::new(),
            running: BTreeSet::new(),
            pending_reduction: 0,
            last_busy_time: 0.0,
            capacity_trace,
        }
    }

    pub fn id(&self) -> &str {
        &self.spec.endpoint_id
    }

    pub fn active_workers(&self) -> u32 {
        self.active_workers
    }

    pub fn busy_workers(&self) -> u32 {
        self.busy_workers
    }

    pub fn idle_workers(&self) -> u32 {
        self.active_workers - self.busy_workers
    }

    pub fn pending_reduction(&self) -> u32 {
        self.pending_reduction
    }

    pub fn queued(&self) -> &VecDeque<TaskId> {
        &self.queued
    }

    pub fn running(&self) -> &BTreeSet<TaskId> {
        &self.running
    }

    pub fn is_running(&self, task: TaskId) -> bool {
        self.running.contains(&task)
    }

    pub fn nodes(&self) -> u32 {
        self.active_workers.div_ceil(self.spec.workers_per_node)
    }

    /// Hands a task to the endpoint: it starts on an idle worker or waits
    /// at the tail of the queue.
    pub fn dispatch(&mut self, task: TaskId, now: f64) -> DispatchOutcome {
        if self.busy_workers < self.active_workers && self.queued.is_empty() {
            self.busy_workers += 1;
            self.running.insert(task);
            self.last_busy_time = now;
            DispatchOutcome::Accepted
        } else {
            self.queued.push_back(task);
            DispatchOutcome::Queued
        }
    }

    /// Frees the worker of a finished task and starts the queue head on it,
    /// unless the worker is owed to a pending capacity reduction.
    pub fn complete(&mut self, task: TaskId, now: f64) -> Result<Option<TaskId>, EndpointError> {
        if !self.running.remove(&task) {
            return Err(EndpointError::NotRunning {
                task,
                endpoint: self.spec.endpoint_id.clone(),
            });
        }
        self.busy_workers -= 1;
        self.last_busy_time = now;
        if self.pending_reduction > 0 {
            self.pending_reduction -= 1;
            self.active_workers -= 1;
            return Ok(None);
        }
        Ok(self.start_next(now))
    }

    fn start_next(&mut self, now: f64) -> Option<TaskId> {
        if self.busy_workers >= self.active_workers {
            return None;
        }
        let next = self.queued.pop_front()?;
        self.busy_workers += 1;
        self.running.insert(next);
        self.last_busy_time = now;
        Some(next)
    }

    fn fill_idle(&mut self, now: f64) -> Vec<TaskId> {
        let mut started = Vec::new();
        while let Some(t) = self.start_next(now) {
            started.push(t);
        }
        started
    }

    /// Adjusts the worker count. Running tasks are never evicted: a cut
    /// below the busy count clamps there and the remainder is retired as
    /// workers free up. Returns the new count and any queued tasks started.
    pub fn apply_capacity_event(&mut self, delta: i64, now: f64) -> (u32, Vec<TaskId>) {
        let max = self.spec.max_workers() as i64;
        if delta >= 0 {
            let mut add = delta as u32;
            let cancel = add.min(self.pending_reduction);
            self.pending_reduction -= cancel;
            add -= cancel;
            let target = (self.active_workers as i64 + add as i64).min(max);
            self.active_workers = target as u32;
        } else {
            let wanted = self.active_workers as i64 + delta;
            let floor = self.busy_workers as i64;
            if wanted < floor {
                let owed = (floor - wanted.max(0)) as u32;
                log::debug!(
                    "endpoint {}: capacity cut clamped at {} busy workers, {} retire later",
                    self.spec.endpoint_id,
                    floor,
                    owed
                );
                self.pending_reduction = (self.pending_reduction + owed).min(self.busy_workers);
                self.active_workers = floor as u32;
            } else {
                self.active_workers = wanted as u32;
            }
        }
        let started = self.fill_idle(now);
        (self.active_workers, started)
    }

    /// Grows or shrinks by whole nodes. Shrinking only removes idle workers.
    pub fn scale_nodes(&mut self, node_delta: i64, now: f64) -> Vec<TaskId> {
        let wpn = self.spec.workers_per_node as i64;
        let target_nodes = (self.nodes() as i64 + node_delta).clamp(0, self.spec.max_nodes as i64);
        let target = (target_nodes * wpn).max(self.busy_workers as i64) as u32;
        self.active_workers = target.min(self.spec.max_workers().max(self.busy_workers));
        if node_delta < 0 {
            self.pending_reduction = 0;
        }
        self.fill_idle(now)
    }

    /// Number of tasks present at the endpoint, running or queued.
    pub fn load(&self) -> usize {
        self.running.len() + self.queued.len()
    }
}

/// Endpoints addressed by id or by declaration index.
#[derive(Debug, Clone, Default)]
pub struct EndpointPool {
    endpoints: Vec<EndpointModel>,
    index: BTreeMap<String, usize>,
}

impl EndpointPool {
    pub fn new(endpoints: Vec<EndpointModel>) -> Self {
        let index = endpoints
            .iter()
            .enumerate()
            .map(|(i, e)| (e.spec.endpoint_id.clone(), i))
            .collect();
        Self { endpoints, index }
    }

    pub fn index_of(&self, id: &str) -> Result<usize, EndpointError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| EndpointError::UnknownEndpoint(id.to_string()))
    }

    pub fn dispatch(&mut self, id: &str, task: TaskId, now: f64) -> Result<DispatchOutcome, EndpointError> {
        let i = self.index_of(id)?;
        Ok(self.endpoints[i].dispatch(task, now))
    }

    pub fn complete(&mut self, id: &str, task: TaskId, now: f64) -> Result<Option<TaskId>, EndpointError> {
        let i = self.index_of(id)?;
        self.endpoints[i].complete(task, now)
    }

    pub fn len(&self) -> usize {
        self.endpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.endpoints.is_empty()
    }

    pub fn get(&self, i: usize) -> &EndpointModel {
        &self.endpoints[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut EndpointModel {
        &mut self.endpoints[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &EndpointModel> {
        self.endpoints.iter()
    }

    pub fn total_active(&self) -> u64 {
        self.endpoints.iter().map(|e| e.active_workers as u64).sum()
    }
}

/// Snapshot of one endpoint as seen by the scaling policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleView {
    pub workers_per_node: u32,
    pub max_nodes: u32,
    pub active_workers: u32,
    /// Unfinished tasks assigned to this endpoint.
    pub queue_share: u64,
    /// How long the endpoint has been fully idle, if it is.
    pub idle_for: Option<f64>,
    pub idle_timeout: f64,
}

/// Default multi-endpoint elasticity: when the workflow has more unfinished
/// tasks than workers, every endpoint grows (in whole nodes, capped at its
/// maximum) toward its own share; an endpoint idle for at least its timeout
/// releases everything. Returns `(endpoint index, node delta)` pairs.
pub fn scale_decision(total_pending: u64, endpoints: &[ScaleView]) -> Vec<(usize, i64)> {
    let total_active: u64 = endpoints.iter().map(|e| e.active_workers as u64).sum();
    let mut out = Vec::new();
    for (i, e) in endpoints.iter().enumerate() {
        let nodes = e.active_workers.div_ceil(e.workers_per_node) as i64;
        if total_pending > total_active && e.queue_share > 0 {
            let target = e
                .queue_share
                .div_ceil(e.workers_per_node as u64)
                .min(e.max_nodes as u64) as i64;
            if target > nodes {
                out.push((i, target - nodes));
                continue;
            }
        }
        if let Some(idle) = e.idle_for {
            if idle >= e.idle_timeout && e.active_workers > 0 {
                out.push((i, -nodes));
            }
        }
    }
    out
}
