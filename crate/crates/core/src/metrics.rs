//! Run results and their CSV form.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::dag::TaskState;
use crate::data::TransferRecord;
use crate::profiler::TaskRecord;
use crate::scheduler::SchedulerKind;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskMetrics {
    pub task: String,
    pub function: String,
    pub endpoint: Option<String>,
    pub state: TaskState,
    pub unrunnable: bool,
    pub attempts: u32,
    pub submitted: Option<f64>,
    pub deps_done: Option<f64>,
    pub staged: Option<f64>,
    pub dispatched: Option<f64>,
    pub started: Option<f64>,
    pub finished: Option<f64>,
    pub observed: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UtilizationSample {
    pub time: f64,
    pub endpoint: usize,
    /// Workers executing a task.
    pub busy: u32,
    pub active: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StagingSample {
    pub time: f64,
    pub tasks_in_staging: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailureReport {
    pub task: String,
    pub attempts: u32,
    /// Endpoint of each failed attempt, oldest first.
    pub failed_on: Vec<String>,
    /// One line per failed attempt, oldest first.
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Overhead {
    /// Placement decisions taken, one per task per placement.
    pub decisions: u64,
    /// Wall-clock seconds spent inside scheduling logic.
    pub wall_seconds: f64,
}

impl Overhead {
    pub fn per_decision(&self) -> f64 {
        if self.decisions == 0 {
            0.0
        } else {
            self.wall_seconds / self.decisions as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsLog {
    pub scenario: String,
    pub scheduler: SchedulerKind,
    pub seed: u64,
    pub endpoints: Vec<String>,
    pub makespan: f64,
    pub transfer_bytes: u64,
    pub tasks_total: usize,
    pub tasks_done: usize,
    pub tasks_failed: usize,
    pub tasks_unrunnable: usize,
    /// Completed tasks per endpoint.
    pub tasks_per_endpoint: Vec<usize>,
    pub utilization: Vec<UtilizationSample>,
    pub staging: Vec<StagingSample>,
    pub transfers: Vec<TransferRecord>,
    pub tasks: Vec<TaskMetrics>,
    pub failures: Vec<FailureReport>,
    pub overhead: Overhead,
    /// Events processed by the simulator.
    pub events: u64,
    /// Tasks sent to endpoints, counting re-sends.
    pub dispatches: u64,
    /// Hash over the processed event sequence; equal runs give equal hashes.
    pub trace_hash: u64,
    /// Execution records produced by this run, ready to append to a history file.
    pub new_records: Vec<TaskRecord>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn csv_err(e: csv::Error) -> io::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => e,
        other => io::Error::other(format!("{other:?}")),
    }
}

impl MetricsLog {
    pub fn transfer_gb(&self) -> f64 {
        self.transfer_bytes as f64 / 1e9
    }

    /// Peak of `active` workers per endpoint over the run.
    pub fn peak_active(&self) -> Vec<u32> {
        let mut peak = vec![0; self.endpoints.len()];
        for s in &self.utilization {
            peak[s.endpoint] = peak[s.endpoint].max(s.active);
        }
        peak
    }

    /// Distinct consecutive values of `active` for one endpoint.
    pub fn active_series(&self, endpoint: usize) -> Vec<u32> {
        let mut out: Vec<u32> = Vec::new();
        for s in self.utilization.iter().filter(|s| s.endpoint == endpoint) {
            if out.last() != Some(&s.active) {
                out.push(s.active);
            }
        }
        out
    }

    /// Writes summary, utilization, transfers, staging, tasks and overhead
    /// CSVs into `dir`, creating it if needed.
    pub fn emit(&self, dir: &Path) -> io::Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut open = |name: &str| -> io::Result<csv::Writer<fs::File>> {
            let path = dir.join(name);
            written.push(path.clone());
            Ok(csv::Writer::from_writer(fs::File::create(path)?))
        };

        let mut w = open("summary.csv")?;
        let mut header: Vec<String> = [
            "scenario",
            "scheduler",
            "seed",
            "makespan_s",
            "transfer_GB",
            "tasks_total",
            "tasks_done",
            "tasks_failed",
            "tasks_unrunnable",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend(self.endpoints.iter().map(|e| format!("tasks_{e}")));
        w.write_record(&header).map_err(csv_err)?;
        if self.tasks_total > 0 {
            let mut row = vec![
                self.scenario.clone(),
                self.scheduler.to_string(),
                self.seed.to_string(),
                format!("{:.6}", self.makespan),
                format!("{:.6}", self.transfer_gb()),
                self.tasks_total.to_string(),
                self.tasks_done.to_string(),
                self.tasks_failed.to_string(),
                self.tasks_unrunnable.to_string(),
            ];
            row.extend(self.tasks_per_endpoint.iter().map(|n| n.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;

        let mut w = open("utilization.csv")?;
        w.write_record(["time_s", "endpoint", "busy", "active"]).map_err(csv_err)?;
        if self.tasks_total > 0 {
            for s in &self.utilization {
                w.write_record([
                    format!("{:.6}", s.time),
                    self.endpoints[s.endpoint].clone(),
                    s.busy.to_string(),
                    s.active.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush()?;

        let mut w = open("transfers.csv")?;
        w.write_record([
            "job_id",
            "data_id",
            "src",
            "dst",
            "size_B",
            "attempt",
            "start_s",
            "end_s",
            "latency_s",
            "concurrent",
            "success",
            "probe",
            "dst_had_replica",
        ])
        .map_err(csv_err)?;
        for t in &self.transfers {
            w.write_record([
                t.job_id.to_string(),
                t.data_id.map(|d| d.to_string()).unwrap_or_default(),
                self.endpoints[t.src].clone(),
                self.endpoints[t.dst].clone(),
                t.size.to_string(),
                t.attempt.to_string(),
                format!("{:.6}", t.start),
                format!("{:.6}", t.end),
                format!("{:.6}", t.latency),
                t.concurrent.to_string(),
                t.success.to_string(),
                t.probe.to_string(),
                t.dst_had_replica.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;

        let mut w = open("staging.csv")?;
        w.write_record(["time_s", "tasks_in_staging"]).map_err(csv_err)?;
        if self.tasks_total > 0 {
            for s in &self.staging {
                w.write_record([format!("{:.6}", s.time), s.tasks_in_staging.to_string()])
                    .map_err(csv_err)?;
            }
        }
        w.flush()?;

        let mut w = open("tasks.csv")?;
        w.write_record([
            "task",
            "function",
            "endpoint",
            "state",
            "unrunnable",
            "attempts",
            "submit_s",
            "deps_done_s",
            "staged_s",
            "dispatch_s",
            "start_s",
            "end_s",
            "observed_s",
        ])
        .map_err(csv_err)?;
        for t in &self.tasks {
            w.write_record([
                t.task.clone(),
                t.function.clone(),
                t.endpoint.clone().unwrap_or_default(),
                t.state.to_string(),
                t.unrunnable.to_string(),
                t.attempts.to_string(),
                opt(t.submitted),
                opt(t.deps_done),
                opt(t.staged),
                opt(t.dispatched),
                opt(t.started),
                opt(t.finished),
                opt(t.observed),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;

        let mut w = open("overhead.csv")?;
        w.write_record(["scheduler", "decisions", "wall_s", "wall_per_decision_s"])
            .map_err(csv_err)?;
        if self.tasks_total > 0 {
            w.write_record([
                self.scheduler.to_string(),
                self.overhead.decisions.to_string(),
                format!("{:.9}", self.overhead.wall_seconds),
                format!("{:.9}", self.overhead.per_decision()),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(written)
    }
}
