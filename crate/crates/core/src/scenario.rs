//! Scenario files: endpoints, network, functions, workflow and run defaults.
//!
//! A scenario is a single JSON document. Field names carry their units
//! (`_s`, `_MB`, `_MBps`, `_B`).

use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::cmp::Reverse;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dag::{ResourceKind, MAX_INLINE_ARGS_BYTES};
use crate::data::FileTransferType;
use crate::endpoint::{CapacityEvent, EndpointSpec};
use crate::network::{Link, NetworkModel};
use crate::scheduler::SchedulerKind;

/// Bytes per MB in scenario files.
pub const MB: f64 = 1e6;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cycle: task `{task}` reaches itself through its deps ({path})")]
    Cycle { task: String, path: String },
    #[error("dangling reference: {field} of {entry} names unknown `{target}`")]
    Dangling {
        field: &'static str,
        entry: String,
        target: String,
    },
    #[error("negative value: {field} of {entry} is {value}")]
    Negative {
        field: &'static str,
        entry: String,
        value: f64,
    },
    #[error("missing network pair: no link from `{src}` to `{dst}` and no default_link")]
    MissingNetworkPair { src: String, dst: String },
    #[error("duplicate {kind} `{id}`")]
    Duplicate { kind: &'static str, id: String },
    #[error("invalid {field} of {entry}: {reason}")]
    Invalid {
        field: &'static str,
        entry: String,
        reason: String,
    },
    #[error("unknown builtin scenario `{0}` (expected drug-like, montage-like, elasticity, dynamic-drug or dynamic-montage)")]
    UnknownBuiltin(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("parsing scenario: {0}")]
    Parse(#[from] serde_json::Error),
}

impl ScenarioError {
    /// Process exit code for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::Io { .. } => 3,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacityEntry {
    pub time_s: f64,
    pub delta_workers: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointEntry {
    pub endpoint_id: String,
    pub cores_per_worker: u32,
    pub cpu_freq: f64,
    pub ram: f64,
    pub workers_per_node: u32,
    pub max_nodes: u32,
    pub initial_nodes: u32,
    pub idle_timeout: f64,
    pub perf_factor: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub capacity_trace: Vec<CapacityEntry>,
}

impl EndpointEntry {
    pub fn spec(&self) -> EndpointSpec {
        EndpointSpec {
            endpoint_id: self.endpoint_id.clone(),
            cores_per_worker: self.cores_per_worker,
            cpu_freq: self.cpu_freq,
            ram: self.ram,
            workers_per_node: self.workers_per_node,
            max_nodes: self.max_nodes,
            initial_nodes: self.initial_nodes,
            idle_timeout: self.idle_timeout,
            perf_factor: self.perf_factor,
        }
    }

    pub fn trace(&self) -> Vec<CapacityEvent> {
        self.capacity_trace
            .iter()
            .map(|c| CapacityEvent {
                time: c.time_s,
                delta_workers: c.delta_workers,
            })
            .collect()
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    #[serde(rename = "bandwidth_MBps")]
    pub bandwidth_mbps: f64,
    pub latency_s: f64,
    #[serde(default = "one")]
    pub concurrency_penalty: f64,
}

impl LinkSpec {
    pub fn link(&self) -> Link {
        Link {
            bandwidth: self.bandwidth_mbps * MB,
            latency: self.latency_s,
            concurrency_penalty: self.concurrency_penalty,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairLink {
    pub src: String,
    pub dst: String,
    #[serde(rename = "bandwidth_MBps")]
    pub bandwidth_mbps: f64,
    pub latency_s: f64,
    #[serde(default = "one")]
    pub concurrency_penalty: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientSpec {
    #[serde(default)]
    pub dispatch_latency_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_link: Option<LinkSpec>,
    #[serde(default)]
    pub links: Vec<PairLink>,
    #[serde(default)]
    pub client: ClientSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostHintSpec {
    pub fixed_s: f64,
    #[serde(rename = "rate_s_per_MB", default)]
    pub rate_s_per_mb: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionSpec {
    pub name: String,
    #[serde(default)]
    pub resource_kind: ResourceKind,
    pub true_fixed_s: f64,
    #[serde(rename = "true_rate_s_per_MB", default)]
    pub true_rate_s_per_mb: f64,
    #[serde(default)]
    pub output_ratio: f64,
    #[serde(default)]
    pub noise: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_hint: Option<CostHintSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileDep {
    pub data_id: String,
    #[serde(rename = "size_MB")]
    pub size_mb: f64,
    pub locations: Vec<String>,
}

impl FileDep {
    pub fn bytes(&self) -> u64 {
        (self.size_mb * MB).round() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskEntry {
    pub id: String,
    pub function: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub deps: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub file_deps: Vec<FileDep>,
    #[serde(rename = "inline_args_B", default)]
    pub inline_args_b: u64,
    #[serde(default)]
    pub submit_time_s: f64,
    /// Pins the task to one endpoint regardless of scheduler.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Defaults {
    pub scheduler: SchedulerKind,
    pub max_transfer_retries: u32,
    pub transfer_concurrency: usize,
    pub poll_interval_s: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub max_task_attempts: u32,
    pub reschedule_period_s: f64,
    pub reschedule: bool,
    pub transfer_failure_rate: f64,
    pub file_transfer_type: FileTransferType,
    pub sched_time_factor: f64,
    pub refresh_interval_s: f64,
    pub elasticity: bool,
    pub scale_interval_s: f64,
    pub probe_on_init: bool,
    #[serde(rename = "probe_size_MB")]
    pub probe_size_mb: f64,
    pub sync_lag_s: f64,
}

impl Default for Defaults {
    fn default() -> Self {
        Self {
            scheduler: SchedulerKind::Dha,
            max_transfer_retries: 3,
            transfer_concurrency: 4,
            poll_interval_s: 0.0,
            batch_size: 1,
            seed: 0,
            max_task_attempts: 8,
            reschedule_period_s: 10.0,
            reschedule: true,
            transfer_failure_rate: 0.0,
            file_transfer_type: FileTransferType::Simulated,
            sched_time_factor: 0.0,
            refresh_interval_s: 5.0,
            elasticity: false,
            scale_interval_s: 1.0,
            probe_on_init: false,
            probe_size_mb: 10.0,
            sync_lag_s: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub endpoints: Vec<EndpointEntry>,
    #[serde(default)]
    pub network: NetworkSpec,
    pub functions: Vec<FunctionSpec>,
    #[serde(default)]
    pub workflow: Vec<TaskEntry>,
    #[serde(default)]
    pub defaults: Defaults,
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Scenario::from_json(&text)
}

fn negative(field: &'static str, entry: &str, value: f64) -> Result<(), ScenarioError> {
    if value < 0.0 || value.is_nan() {
        return Err(ScenarioError::Negative {
            field,
            entry: entry.to_string(),
            value,
        });
    }
    Ok(())
}

fn invalid(field: &'static str, entry: &str, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field,
        entry: entry.to_string(),
        reason: reason.into(),
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario = serde_json::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), ScenarioError> {
        fs::write(path, self.to_json() + "\n").map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn endpoint_index(&self) -> BTreeMap<&str, usize> {
        self.endpoints
            .iter()
            .enumerate()
            .map(|(i, e)| (e.endpoint_id.as_str(), i))
            .collect()
    }

    pub fn function_index(&self) -> BTreeMap<&str, usize> {
        self.functions
            .iter()
            .enumerate()
            .map(|(i, f)| (f.name.as_str(), i))
            .collect()
    }

    pub fn task_index(&self) -> BTreeMap<&str, usize> {
        self.workflow
            .iter()
            .enumerate()
            .map(|(i, t)| (t.id.as_str(), i))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.endpoints.is_empty() {
            return Err(invalid("endpoints", "scenario", "at least one endpoint is required"));
        }
        let mut eps = BTreeMap::new();
        for (i, e) in self.endpoints.iter().enumerate() {
            if eps.insert(e.endpoint_id.as_str(), i).is_some() {
                return Err(ScenarioError::Duplicate {
                    kind: "endpoint",
                    id: e.endpoint_id.clone(),
                });
            }
            let entry = format!("endpoint `{}`", e.endpoint_id);
            negative("cpu_freq", &entry, e.cpu_freq)?;
            negative("ram", &entry, e.ram)?;
            negative("idle_timeout", &entry, e.idle_timeout)?;
            negative("perf_factor", &entry, e.perf_factor)?;
            e.spec()
                .validate()
                .map_err(|err| invalid("endpoint", &entry, err.to_string()))?;
            for c in &e.capacity_trace {
                negative("capacity_trace.time_s", &entry, c.time_s)?;
            }
        }
        self.validate_network(&eps)?;

        let mut fns = BTreeSet::new();
        for f in &self.functions {
            if !fns.insert(f.name.as_str()) {
                return Err(ScenarioError::Duplicate {
                    kind: "function",
                    id: f.name.clone(),
                });
            }
            let entry = format!("function `{}`", f.name);
            negative("true_fixed_s", &entry, f.true_fixed_s)?;
            negative("true_rate_s_per_MB", &entry, f.true_rate_s_per_mb)?;
            negative("output_ratio", &entry, f.output_ratio)?;
            negative("noise", &entry, f.noise)?;
            if f.noise >= 1.0 {
                return Err(invalid("noise", &entry, "must be below 1"));
            }
            if let Some(h) = &f.cost_hint {
                negative("cost_hint.fixed_s", &entry, h.fixed_s)?;
                negative("cost_hint.rate_s_per_MB", &entry, h.rate_s_per_mb)?;
            }
        }

        let mut tasks = BTreeMap::new();
        let mut data: BTreeMap<&str, &FileDep> = BTreeMap::new();
        for (i, t) in self.workflow.iter().enumerate() {
            if tasks.insert(t.id.as_str(), i).is_some() {
                return Err(ScenarioError::Duplicate {
                    kind: "task",
                    id: t.id.clone(),
                });
            }
        }
        for t in &self.workflow {
            let entry = format!("task `{}`", t.id);
            if !fns.contains(t.function.as_str()) {
                return Err(ScenarioError::Dangling {
                    field: "function",
                    entry,
                    target: t.function.clone(),
                });
            }
            for d in &t.deps {
                if !tasks.contains_key(d.as_str()) {
                    return Err(ScenarioError::Dangling {
                        field: "deps",
                        entry,
                        target: d.clone(),
                    });
                }
            }
            negative("submit_time_s", &entry, t.submit_time_s)?;
            if t.inline_args_b > MAX_INLINE_ARGS_BYTES {
                return Err(invalid(
                    "inline_args_B",
                    &entry,
                    format!("{} bytes exceeds the 10 MB inline limit; pass large data as a file dep", t.inline_args_b),
                ));
            }
            if let Some(pin) = &t.endpoint {
                if !eps.contains_key(pin.as_str()) {
                    return Err(ScenarioError::Dangling {
                        field: "endpoint",
                        entry,
                        target: pin.clone(),
                    });
                }
            }
            for f in &t.file_deps {
                negative("file_deps.size_MB", &entry, f.size_mb)?;
                if f.locations.is_empty() {
                    return Err(invalid("file_deps.locations", &entry, format!("`{}` has no location", f.data_id)));
                }
                for loc in &f.locations {
                    if !eps.contains_key(loc.as_str()) {
                        return Err(ScenarioError::Dangling {
                            field: "file_deps.locations",
                            entry,
                            target: loc.clone(),
                        });
                    }
                }
                match data.get(f.data_id.as_str()) {
                    Some(prev) if *prev != f => {
                        return Err(ScenarioError::Duplicate {
                            kind: "data item with a conflicting definition",
                            id: f.data_id.clone(),
                        })
                    }
                    _ => {
                        data.insert(f.data_id.as_str(), f);
                    }
                }
            }
        }
        self.check_acyclic(&tasks)?;
        self.validate_defaults()
    }

    fn validate_network(&self, eps: &BTreeMap<&str, usize>) -> Result<(), ScenarioError> {
        let check_link = |entry: &str, bw: f64, lat: f64, pen: f64| -> Result<(), ScenarioError> {
            negative("bandwidth_MBps", entry, bw)?;
            negative("latency_s", entry, lat)?;
            if bw <= 0.0 {
                return Err(invalid("bandwidth_MBps", entry, "must be positive"));
            }
            if pen < 1.0 {
                return Err(invalid("concurrency_penalty", entry, "must be at least 1"));
            }
            Ok(())
        };
        if let Some(d) = &self.network.default_link {
            check_link("network.default_link", d.bandwidth_mbps, d.latency_s, d.concurrency_penalty)?;
        }
        negative(
            "dispatch_latency_s",
            "network.client",
            self.network.client.dispatch_latency_s,
        )?;
        let mut pairs = BTreeSet::new();
        for l in &self.network.links {
            let entry = format!("link `{}` -> `{}`", l.src, l.dst);
            for name in [&l.src, &l.dst] {
                if !eps.contains_key(name.as_str()) {
                    return Err(ScenarioError::Dangling {
                        field: "network.links",
                        entry,
                        target: name.clone(),
                    });
                }
            }
            if l.src == l.dst {
                return Err(invalid("network.links", &entry, "src and dst are the same endpoint"));
            }
            if !pairs.insert((l.src.as_str(), l.dst.as_str())) {
                return Err(ScenarioError::Duplicate { kind: "link", id: format!("{} -> {}", l.src, l.dst) });
            }
            check_link(&entry, l.bandwidth_mbps, l.latency_s, l.concurrency_penalty)?;
        }
        if self.network.default_link.is_none() {
            for s in &self.endpoints {
                for d in &self.endpoints {
                    if s.endpoint_id != d.endpoint_id
                        && !pairs.contains(&(s.endpoint_id.as_str(), d.endpoint_id.as_str()))
                    {
                        return Err(ScenarioError::MissingNetworkPair {
                            src: s.endpoint_id.clone(),
                            dst: d.endpoint_id.clone(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    fn check_acyclic(&self, tasks: &BTreeMap<&str, usize>) -> Result<(), ScenarioError> {
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut color = vec![0u8; self.workflow.len()];
        for root in 0..self.workflow.len() {
            if color[root] != 0 {
                continue;
            }
            let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
            color[root] = 1;
            while let Some(&mut (t, ref mut next)) = stack.last_mut() {
                let deps = &self.workflow[t].deps;
                if *next < deps.len() {
                    let d = tasks[deps[*next].as_str()];
                    *next += 1;
                    match color[d] {
                        0 => {
                            color[d] = 1;
                            stack.push((d, 0));
                        }
                        1 => {
                            let start = stack.iter().position(|s| s.0 == d).unwrap_or(0);
                            let mut path: Vec<&str> =
                                stack[start..].iter().map(|s| self.workflow[s.0].id.as_str()).collect();
                            path.push(&self.workflow[d].id);
                            return Err(ScenarioError::Cycle {
                                task: self.workflow[d].id.clone(),
                                path: path.join(" -> "),
                            });
                        }
                        _ => {}
                    }
                } else {
                    color[t] = 2;
                    stack.pop();
                }
            }
        }
        Ok(())
    }

    fn validate_defaults(&self) -> Result<(), ScenarioError> {
        let d = &self.defaults;
        let entry = "defaults";
        negative("poll_interval_s", entry, d.poll_interval_s)?;
        negative("sched_time_factor", entry, d.sched_time_factor)?;
        negative("sync_lag_s", entry, d.sync_lag_s)?;
        negative("probe_size_MB", entry, d.probe_size_mb)?;
        negative("transfer_failure_rate", entry, d.transfer_failure_rate)?;
        if d.transfer_failure_rate > 1.0 {
            return Err(invalid("transfer_failure_rate", entry, "must be a probability"));
        }
        if d.batch_size == 0 {
            return Err(invalid("batch_size", entry, "must be at least 1"));
        }
        if d.transfer_concurrency == 0 {
            return Err(invalid("transfer_concurrency", entry, "must be at least 1"));
        }
        if d.max_task_attempts == 0 {
            return Err(invalid("max_task_attempts", entry, "must be at least 1"));
        }
        for (field, v) in [
            ("reschedule_period_s", d.reschedule_period_s),
            ("refresh_interval_s", d.refresh_interval_s),
            ("scale_interval_s", d.scale_interval_s),
        ] {
            if v.is_nan() || v <= 0.0 {
                return Err(invalid(field, entry, "must be positive"));
            }
        }
        Ok(())
    }

    /// Ground-truth network between endpoints in declaration order.
    pub fn network_model(&self) -> NetworkModel {
        let idx = self.endpoint_index();
        let n = self.endpoints.len();
        let mut net = NetworkModel::new(n, self.network.client.dispatch_latency_s);
        if let Some(d) = &self.network.default_link {
            for s in 0..n {
                for t in 0..n {
                    if s != t {
                        net.set_link(s, t, d.link());
                    }
                }
            }
        }
        for l in &self.network.links {
            let spec = LinkSpec {
                bandwidth_mbps: l.bandwidth_mbps,
                latency_s: l.latency_s,
                concurrency_penalty: l.concurrency_penalty,
            };
            net.set_link(idx[l.src.as_str()], idx[l.dst.as_str()], spec.link());
        }
        net
    }

    /// Workflow entries in submission order: by effective submit time (a
    /// task cannot arrive before its deps), then dependency order, then
    /// declaration order. Returns `(entry index, effective submit time)`.
    pub fn submission_order(&self) -> Vec<(usize, f64)> {
        let idx = self.task_index();
        let n = self.workflow.len();
        let deps: Vec<Vec<usize>> = self
            .workflow
            .iter()
            .map(|t| t.deps.iter().map(|d| idx[d.as_str()]).collect())
            .collect();
        let mut succ = vec![Vec::new(); n];
        let mut indeg = vec![0usize; n];
        for (t, ds) in deps.iter().enumerate() {
            let unique: BTreeSet<usize> = ds.iter().copied().collect();
            indeg[t] = unique.len();
            for d in unique {
                succ[d].push(t);
            }
        }
        let mut eff: Vec<f64> = self.workflow.iter().map(|t| t.submit_time_s).collect();
        let mut heap = BinaryHeap::new();
        for t in 0..n {
            if indeg[t] == 0 {
                heap.push(Reverse((OrderedFloat(eff[t]), t)));
            }
        }
        let mut out = Vec::with_capacity(n);
        while let Some(Reverse((OrderedFloat(time), t))) = heap.pop() {
            out.push((t, time));
            for &s in &succ[t] {
                eff[s] = eff[s].max(time);
                indeg[s] -= 1;
                if indeg[s] == 0 {
                    heap.push(Reverse((OrderedFloat(eff[s]), s)));
                }
            }
        }
        out
    }

    /// Copy of this scenario reduced to one endpoint, with every file and
    /// pin moved there. Used for single-endpoint baselines.
    pub fn restrict_to(&self, endpoint_id: &str) -> Result<Scenario, ScenarioError> {
        let ep = self
            .endpoints
            .iter()
            .find(|e| e.endpoint_id == endpoint_id)
            .ok_or_else(|| ScenarioError::Dangling {
                field: "endpoint",
                entry: "restriction".into(),
                target: endpoint_id.into(),
            })?
            .clone();
        let mut out = self.clone();
        out.name = format!("{}-only-{}", self.name, endpoint_id);
        out.endpoints = vec![ep];
        out.network.links.clear();
        out.network.default_link = None;
        for t in &mut out.workflow {
            if t.endpoint.is_some() {
                t.endpoint = Some(endpoint_id.to_string());
            }
            for f in &mut t.file_deps {
                f.locations = vec![endpoint_id.to_string()];
            }
        }
        out.validate()?;
        Ok(out)
    }

    pub fn total_workers(&self) -> u64 {
        self.endpoints
            .iter()
            .map(|e| e.spec().initial_workers() as u64)
            .sum()
    }
}
