//! Data items, replica sets and staging transfers.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::fs;
use std::io;
use std::path::PathBuf;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dag::{DataId, TaskId};
use crate::network::NetworkModel;
use crate::rng::{substream, PURPOSE_TRANSFER};

pub type JobId = usize;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("unknown file transfer type `{0}` (expected simulated or local-copy)")]
    UnknownBackend(String),
    #[error("local copy under {path}: {source}")]
    LocalCopy { path: PathBuf, source: io::Error },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataItem {
    pub data_id: DataId,
    pub size: u64,
    pub locations: BTreeSet<usize>,
    pub producer: Option<TaskId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum JobState {
    Waiting,
    Active,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferJob {
    pub job_id: JobId,
    /// `None` for bandwidth probes, which carry no data item.
    pub data_id: Option<DataId>,
    pub size: u64,
    pub src: usize,
    pub dst: usize,
    pub state: JobState,
    pub retries_used: u32,
    pub started_at: Option<f64>,
    pub finished_at: Option<f64>,
    pub waiters: BTreeSet<TaskId>,
    attempt_ok: bool,
    attempt_latency: f64,
    attempt_concurrent: usize,
}

impl TransferJob {
    pub fn is_probe(&self) -> bool {
        self.data_id.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FileTransferType {
    #[default]
    Simulated,
    LocalCopy,
}

impl fmt::Display for FileTransferType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Simulated => "simulated",
            Self::LocalCopy => "local-copy",
        })
    }
}

impl FromStr for FileTransferType {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "simulated" => Ok(Self::Simulated),
            "local-copy" => Ok(Self::LocalCopy),
            _ => Err(DataError::UnknownBackend(s.into())),
        }
    }
}

/// Result of one transfer attempt, known when it starts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttemptOutcome {
    pub latency: f64,
    pub duration: f64,
    pub success: bool,
}

pub trait TransferBackend {
    fn kind(&self) -> FileTransferType;

    /// Predicted seconds to move `size` bytes, used to pick a source replica.
    fn estimate(&self, src: usize, dst: usize, size: u64) -> Option<f64>;

    /// Runs (or simulates) one attempt of `job` with `concurrent` streams
    /// active on its pair, this one included.
    fn attempt(&mut self, job: &TransferJob, attempt: u32, concurrent: usize) -> AttemptOutcome;
}

/// Network-model durations with seeded Bernoulli failures.
#[derive(Debug, Clone)]
pub struct SimulatedBackend {
    pub network: NetworkModel,
    pub failure_rate: f64,
    pub seed: u64,
}

impl TransferBackend for SimulatedBackend {
    fn kind(&self) -> FileTransferType {
        FileTransferType::Simulated
    }

    fn estimate(&self, src: usize, dst: usize, size: u64) -> Option<f64> {
        self.network.transfer(src, dst, size, 1).map(|t| t.1)
    }

    fn attempt(&mut self, job: &TransferJob, attempt: u32, concurrent: usize) -> AttemptOutcome {
        let Some((latency, duration)) = self.network.transfer(job.src, job.dst, job.size, concurrent) else {
            log::warn!("no link {} -> {}; transfer job {} fails", job.src, job.dst, job.job_id);
            return AttemptOutcome {
                latency: 0.0,
                duration: 0.0,
                success: false,
            };
        };
        let success = if self.failure_rate > 0.0 {
            let mut rng = substream(self.seed, PURPOSE_TRANSFER, job.job_id as u64, attempt as u64);
            rng.gen::<f64>() >= self.failure_rate
        } else {
            true
        };
        AttemptOutcome {
            latency,
            duration,
            success,
        }
    }
}

/// Copies files between per-endpoint directories under `root`; durations
/// still come from the network model.
#[derive(Debug, Clone)]
pub struct LocalCopyBackend {
    pub network: NetworkModel,
    pub root: PathBuf,
    pub endpoint_names: Vec<String>,
}

impl LocalCopyBackend {
    fn path(&self, endpoint: usize, job: &TransferJob) -> PathBuf {
        let name = match job.data_id {
            Some(d) => format!("data-{d}"),
            None => format!("probe-{}", job.job_id),
        };
        self.root.join(&self.endpoint_names[endpoint]).join(name)
    }

    fn copy(&self, job: &TransferJob) -> Result<(), DataError> {
        let src = self.path(job.src, job);
        let dst = self.path(job.dst, job);
        let wrap = |path: &PathBuf| {
            let path = path.clone();
            move |source| DataError::LocalCopy { path, source }
        };
        if let Some(dir) = src.parent() {
            fs::create_dir_all(dir).map_err(wrap(&src))?;
        }
        if !src.exists() {
            let f = fs::File::create(&src).map_err(wrap(&src))?;
            f.set_len(job.size).map_err(wrap(&src))?;
        }
        if let Some(dir) = dst.parent() {
            fs::create_dir_all(dir).map_err(wrap(&dst))?;
        }
        fs::copy(&src, &dst).map_err(wrap(&dst))?;
        Ok(())
    }
}

impl TransferBackend for LocalCopyBackend {
    fn kind(&self) -> FileTransferType {
        FileTransferType::LocalCopy
    }

    fn estimate(&self, src: usize, dst: usize, size: u64) -> Option<f64> {
        self.network.transfer(src, dst, size, 1).map(|t| t.1)
    }

    fn attempt(&mut self, job: &TransferJob, _attempt: u32, concurrent: usize) -> AttemptOutcome {
        let (latency, duration) = self
            .network
            .transfer(job.src, job.dst, job.size, concurrent)
            .unwrap_or((0.0, 0.0));
        let success = match self.copy(job) {
            Ok(()) => true,
            Err(e) => {
                log::warn!("transfer job {}: {e}", job.job_id);
                false
            }
        };
        AttemptOutcome {
            latency,
            duration,
            success,
        }
    }
}

/// An attempt that has started and will end at `finish_time`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Started {
    pub job: JobId,
    pub finish_time: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageResult {
    /// Jobs the task now waits on, new or shared with other tasks.
    pub waiting_on: Vec<JobId>,
    pub started: Vec<Started>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FinishOutcome {
    /// Bytes arrived. `waiters` are the tasks that were waiting on the job.
    Done { waiters: BTreeSet<TaskId>, started: Vec<Started> },
    /// The attempt failed and a retry began at once.
    Retried { retry: Started },
    /// Out of retries; the waiting tasks fail.
    Failed { waiters: BTreeSet<TaskId>, started: Vec<Started> },
}

/// One attempt as recorded in the transfer log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRecord {
    pub job_id: JobId,
    pub data_id: Option<DataId>,
    pub src: usize,
    pub dst: usize,
    pub size: u64,
    pub attempt: u32,
    pub start: f64,
    pub end: f64,
    pub latency: f64,
    pub concurrent: usize,
    pub success: bool,
    pub probe: bool,
    /// Whether `dst` already held a replica when the attempt started.
    pub dst_had_replica: bool,
}

pub struct DataManager {
    items: Vec<DataItem>,
    jobs: Vec<TransferJob>,
    cap: usize,
    max_retries: u32,
    active: BTreeMap<(usize, usize), usize>,
    waiting: BTreeMap<(usize, usize), VecDeque<JobId>>,
    inflight: BTreeMap<(DataId, usize), JobId>,
    bytes_total: u64,
    backend: Box<dyn TransferBackend>,
    log: Vec<TransferRecord>,
}

impl fmt::Debug for DataManager {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DataManager")
            .field("items", &self.items.len())
            .field("jobs", &self.jobs.len())
            .field("bytes_total", &self.bytes_total)
            .finish()
    }
}

impl DataManager {
    pub fn new(backend: Box<dyn TransferBackend>, concurrency_cap: usize, max_retries: u32) -> Self {
        Self {
            items: Vec::new(),
            jobs: Vec::new(),
            cap: concurrency_cap.max(1),
            max_retries,
            active: BTreeMap::new(),
            waiting: BTreeMap::new(),
            inflight: BTreeMap::new(),
            bytes_total: 0,
            backend,
            log: Vec::new(),
        }
    }

    pub fn concurrency_cap(&self) -> usize {
        self.cap
    }

    pub fn max_retries(&self) -> u32 {
        self.max_retries
    }

    pub fn backend_kind(&self) -> FileTransferType {
        self.backend.kind()
    }

    pub fn add_item(&mut self, size: u64, locations: BTreeSet<usize>, producer: Option<TaskId>) -> DataId {
        let data_id = self.items.len();
        self.items.push(DataItem {
            data_id,
            size,
            locations,
            producer,
        });
        data_id
    }

    pub fn item(&self, id: DataId) -> &DataItem {
        &self.items[id]
    }

    pub fn items(&self) -> &[DataItem] {
        &self.items
    }

    pub fn job(&self, id: JobId) -> &TransferJob {
        &self.jobs[id]
    }

    pub fn jobs(&self) -> &[TransferJob] {
        &self.jobs
    }

    pub fn log(&self) -> &[TransferRecord] {
        &self.log
    }

    pub fn is_resident(&self, data: DataId, endpoint: usize) -> bool {
        self.items[data].locations.contains(&endpoint)
    }

    /// True when a transfer of `data` to `dst` is queued or running.
    pub fn in_flight(&self, data: DataId, dst: usize) -> Option<JobId> {
        self.inflight.get(&(data, dst)).copied()
    }

    /// Bytes of `inputs` not yet on `endpoint`.
    pub fn missing_bytes(&self, inputs: &[DataId], endpoint: usize) -> u64 {
        inputs
            .iter()
            .filter(|&&d| !self.is_resident(d, endpoint))
            .map(|&d| self.items[d].size)
            .sum()
    }

    pub fn active_on(&self, src: usize, dst: usize) -> usize {
        self.active.get(&(src, dst)).copied().unwrap_or(0)
    }

    /// Sum of bytes of every successful non-probe transfer so far.
    pub fn transfer_bytes_total(&self) -> u64 {
        self.bytes_total
    }

    fn pick_source(&self, data: DataId, dst: usize) -> usize {
        let item = &self.items[data];
        let mut best: Option<(usize, f64)> = None;
        for &src in &item.locations {
            let t = self.backend.estimate(src, dst, item.size).unwrap_or(f64::INFINITY);
            if best.is_none_or(|(_, b)| t < b) {
                best = Some((src, t));
            }
        }
        best.map(|b| b.0).expect("data item with no replica")
    }

    /// Creates or joins one job per input not resident at `dst`.
    pub fn stage(&mut self, task: TaskId, dst: usize, inputs: &[DataId], now: f64) -> StageResult {
        let mut result = StageResult::default();
        let mut seen = BTreeSet::new();
        for &data in inputs {
            if self.is_resident(data, dst) || !seen.insert(data) {
                continue;
            }
            if let Some(job) = self.in_flight(data, dst) {
                self.jobs[job].waiters.insert(task);
                result.waiting_on.push(job);
                continue;
            }
            let src = self.pick_source(data, dst);
            let job = self.new_job(Some(data), self.items[data].size, src, dst);
            self.jobs[job].waiters.insert(task);
            self.inflight.insert((data, dst), job);
            result.waiting_on.push(job);
            self.enqueue(job);
        }
        for &job in &result.waiting_on {
            let pair = (self.jobs[job].src, self.jobs[job].dst);
            result.started.extend(self.pump(pair, now));
        }
        result
    }

    /// Moves `size` throwaway bytes to measure a pair.
    pub fn probe(&mut self, src: usize, dst: usize, size: u64, now: f64) -> (JobId, Vec<Started>) {
        let job = self.new_job(None, size, src, dst);
        self.enqueue(job);
        let started = self.pump((src, dst), now);
        (job, started)
    }

    /// Stops `task` waiting on `job`; the job itself keeps going.
    pub fn unsubscribe(&mut self, task: TaskId, job: JobId) {
        self.jobs[job].waiters.remove(&task);
    }

    fn new_job(&mut self, data_id: Option<DataId>, size: u64, src: usize, dst: usize) -> JobId {
        let job_id = self.jobs.len();
        self.jobs.push(TransferJob {
            job_id,
            data_id,
            size,
            src,
            dst,
            state: JobState::Waiting,
            retries_used: 0,
            started_at: None,
            finished_at: None,
            waiters: BTreeSet::new(),
            attempt_ok: false,
            attempt_latency: 0.0,
            attempt_concurrent: 0,
        });
        job_id
    }

    fn enqueue(&mut self, job: JobId) {
        let pair = (self.jobs[job].src, self.jobs[job].dst);
        self.waiting.entry(pair).or_default().push_back(job);
    }

    fn pump(&mut self, pair: (usize, usize), now: f64) -> Vec<Started> {
        let mut started = Vec::new();
        while self.active_on(pair.0, pair.1) < self.cap {
            let Some(job) = self.waiting.get_mut(&pair).and_then(VecDeque::pop_front) else {
                break;
            };
            *self.active.entry(pair).or_default() += 1;
            self.jobs[job].state = JobState::Active;
            self.jobs[job].started_at = Some(now);
            started.push(self.begin_attempt(job, now));
        }
        started
    }

    fn begin_attempt(&mut self, job: JobId, now: f64) -> Started {
        let concurrent = self.active_on(self.jobs[job].src, self.jobs[job].dst);
        let attempt = self.jobs[job].retries_used;
        let out = self.backend.attempt(&self.jobs[job], attempt, concurrent);
        let j = &mut self.jobs[job];
        j.attempt_ok = out.success;
        j.attempt_latency = out.latency;
        j.attempt_concurrent = concurrent;
        let dst_had_replica = j.data_id.is_some_and(|d| self.items[d].locations.contains(&j.dst));
        self.log.push(TransferRecord {
            job_id: job,
            data_id: j.data_id,
            src: j.src,
            dst: j.dst,
            size: j.size,
            attempt,
            start: now,
            end: now + out.duration,
            latency: out.latency,
            concurrent,
            success: out.success,
            probe: j.is_probe(),
            dst_had_replica,
        });
        Started {
            job,
            finish_time: now + out.duration,
        }
    }

    /// `(latency, concurrent)` of the job's current attempt.
    pub fn attempt_shape(&self, job: JobId) -> (f64, usize) {
        let j = &self.jobs[job];
        (j.attempt_latency, j.attempt_concurrent)
    }

    /// Settles the job's current attempt at time `now`.
    pub fn on_transfer_finished(&mut self, job: JobId, now: f64) -> FinishOutcome {
        debug_assert_eq!(self.jobs[job].state, JobState::Active);
        let pair = (self.jobs[job].src, self.jobs[job].dst);
        if self.jobs[job].attempt_ok {
            let j = &mut self.jobs[job];
            j.state = JobState::Done;
            j.finished_at = Some(now);
            let waiters = std::mem::take(&mut j.waiters);
            if let Some(d) = j.data_id {
                let dst = j.dst;
                self.items[d].locations.insert(dst);
                self.bytes_total += j.size;
                self.inflight.remove(&(d, dst));
            }
            *self.active.get_mut(&pair).expect("active pair") -= 1;
            let started = self.pump(pair, now);
            return FinishOutcome::Done { waiters, started };
        }
        if self.jobs[job].retries_used < self.max_retries {
            self.jobs[job].retries_used += 1;
            log::debug!("transfer job {job} failed; retry {}", self.jobs[job].retries_used);
            let retry = self.begin_attempt(job, now);
            return FinishOutcome::Retried { retry };
        }
        let j = &mut self.jobs[job];
        j.state = JobState::Failed;
        j.finished_at = Some(now);
        let waiters = std::mem::take(&mut j.waiters);
        if let Some(d) = j.data_id {
            self.inflight.remove(&(d, j.dst));
        }
        log::warn!("transfer job {job} failed after {} retries", j.retries_used);
        *self.active.get_mut(&pair).expect("active pair") -= 1;
        let started = self.pump(pair, now);
        FinishOutcome::Failed { waiters, started }
    }
}
