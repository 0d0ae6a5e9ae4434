//! Execution and transfer profilers.
//!
//! The execution profiler learns, per function and endpoint, how long a task
//! runs and how much it writes. The transfer profiler learns latency and
//! bandwidth per ordered endpoint pair. Both read from an append-only record
//! history and refit on a refresh tick rather than on every record.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::OpenOptions;
use std::io;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dag::CostHint;
use crate::endpoint::EndpointSpec;
use crate::network::Link;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("malformed task record: {0}")]
    Malformed(String),
    #[error("history file: {0}")]
    Io(#[from] io::Error),
    #[error("history file: {0}")]
    Csv(#[from] csv::Error),
}

/// One observed task execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub function: String,
    pub endpoint: String,
    pub input_size: u64,
    pub exec_time: f64,
    pub output_size: u64,
    pub success: bool,
    pub timestamp: f64,
}

/// Reads a history file: one record per line, no header, fields in the
/// order function, endpoint, input_size, exec_time, output_size, success,
/// timestamp.
pub fn load_history(path: &Path) -> Result<Vec<TaskRecord>, ProfileError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    let mut out = Vec::new();
    for rec in reader.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

/// Appends records to a history file, creating it if needed.
pub fn append_history(path: &Path, records: &[TaskRecord]) -> Result<(), ProfileError> {
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    for r in records {
        writer.serialize(r)?;
    }
    writer.flush()?;
    Ok(())
}

/// A fitted execution-time model for one (function, endpoint) pair.
pub trait ExecModel: fmt::Debug + Send + Sync {
    fn predict(&self, input_size: f64) -> f64;
}

/// Builds an [`ExecModel`] from `(input_size, exec_time)` samples.
pub trait ModelFamily: Send + Sync {
    fn fit(&self, samples: &[(f64, f64)]) -> Arc<dyn ExecModel>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
}

impl LinearFit {
    /// Ordinary least squares of y on x. With no spread in x the fit is the
    /// sample mean.
    pub fn fit(samples: &[(f64, f64)]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let n = samples.len() as f64;
        let mx = samples.iter().map(|s| s.0).sum::<f64>() / n;
        let my = samples.iter().map(|s| s.1).sum::<f64>() / n;
        let sxx: f64 = samples.iter().map(|s| (s.0 - mx) * (s.0 - mx)).sum();
        if sxx <= f64::EPSILON * mx.abs().max(1.0) {
            return Some(Self {
                intercept: my,
                slope: 0.0,
            });
        }
        let sxy: f64 = samples.iter().map(|s| (s.0 - mx) * (s.1 - my)).sum();
        let slope = sxy / sxx;
        Some(Self {
            intercept: my - slope * mx,
            slope,
        })
    }
}

impl ExecModel for LinearFit {
    fn predict(&self, input_size: f64) -> f64 {
        (self.intercept + self.slope * input_size).max(0.0)
    }
}

/// Default family: per-pair linear regression on input size.
#[derive(Debug, Clone, Copy, Default)]
pub struct OrdinaryLeastSquares;

impl ModelFamily for OrdinaryLeastSquares {
    fn fit(&self, samples: &[(f64, f64)]) -> Arc<dyn ExecModel> {
        let fit = LinearFit::fit(samples).unwrap_or(LinearFit {
            intercept: 0.0,
            slope: 0.0,
        });
        Arc::new(fit)
    }
}

/// Ground-truth cost a scenario declares for a function; the profiler only
/// falls back to it when it has neither history nor a hint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeclaredCost {
    pub fixed_seconds: f64,
    pub seconds_per_byte: f64,
    pub output_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionProfile {
    pub name: String,
    pub cost_hint: Option<CostHint>,
    pub declared: Option<DeclaredCost>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimateSource {
    Model,
    CrossEndpoint,
    CostHint,
    Declared,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExecEstimate {
    pub seconds: f64,
    pub output_bytes: f64,
    pub source: EstimateSource,
}

#[derive(Debug, Default, Clone, Copy)]
struct Outcomes {
    successes: u64,
    total: u64,
}

pub struct ExecProfiler {
    functions: Vec<FunctionProfile>,
    fn_index: BTreeMap<String, usize>,
    endpoints: Vec<EndpointSpec>,
    ep_index: BTreeMap<String, usize>,
    history: Vec<TaskRecord>,
    samples: BTreeMap<(usize, usize), Vec<(f64, f64)>>,
    ratio_sums: Vec<(f64, u64)>,
    outcomes: BTreeMap<(usize, usize), Outcomes>,
    records_per_fn: Vec<u64>,
    fits: Arc<BTreeMap<(usize, usize), Arc<dyn ExecModel>>>,
    stale: BTreeSet<(usize, usize)>,
    family: Box<dyn ModelFamily>,
    refits: u64,
    warned: BTreeSet<usize>,
}

impl fmt::Debug for ExecProfiler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExecProfiler")
            .field("functions", &self.functions.len())
            .field("records", &self.history.len())
            .field("refits", &self.refits)
            .finish()
    }
}

impl ExecProfiler {
    pub fn new(functions: Vec<FunctionProfile>, endpoints: Vec<EndpointSpec>) -> Self {
        Self::with_family(functions, endpoints, Box::new(OrdinaryLeastSquares))
    }

    pub fn with_family(
        functions: Vec<FunctionProfile>,
        endpoints: Vec<EndpointSpec>,
        family: Box<dyn ModelFamily>,
    ) -> Self {
        let fn_index = functions
            .iter()
            .enumerate()
            .map(|(i, f)| (f.name.clone(), i))
            .collect();
        let ep_index = endpoints
            .iter()
            .enumerate()
            .map(|(i, e)| (e.endpoint_id.clone(), i))
            .collect();
        let nf = functions.len();
        Self {
            functions,
            fn_index,
            endpoints,
            ep_index,
            history: Vec::new(),
            samples: BTreeMap::new(),
            ratio_sums: vec![(0.0, 0); nf],
            outcomes: BTreeMap::new(),
            records_per_fn: vec![0; nf],
            fits: Arc::new(BTreeMap::new()),
            stale: BTreeSet::new(),
            family,
            refits: 0,
            warned: BTreeSet::new(),
        }
    }

    pub fn function_index(&self, name: &str) -> Option<usize> {
        self.fn_index.get(name).copied()
    }

    /// Appends a record to the history. Models are refit on the next
    /// [`refresh`](Self::refresh), not here.
    pub fn record(&mut self, rec: TaskRecord) -> Result<(), ProfileError> {
        let f = *self
            .fn_index
            .get(&rec.function)
            .ok_or_else(|| ProfileError::Malformed(format!("unknown function `{}`", rec.function)))?;
        let e = *self
            .ep_index
            .get(&rec.endpoint)
            .ok_or_else(|| ProfileError::Malformed(format!("unknown endpoint `{}`", rec.endpoint)))?;
        if rec.exec_time < 0.0 || !rec.exec_time.is_finite() || !rec.timestamp.is_finite() {
            log::warn!("rejecting task record with exec_time {}", rec.exec_time);
            return Err(ProfileError::Malformed(format!(
                "exec_time {} is not a finite non-negative number",
                rec.exec_time
            )));
        }
        let o = self.outcomes.entry((f, e)).or_default();
        o.total += 1;
        if rec.success {
            o.successes += 1;
            self.samples
                .entry((f, e))
                .or_default()
                .push((rec.input_size as f64, rec.exec_time));
            if rec.input_size > 0 {
                let r = &mut self.ratio_sums[f];
                r.0 += rec.output_size as f64 / rec.input_size as f64;
                r.1 += 1;
            }
            self.stale.insert((f, e));
        }
        self.records_per_fn[f] += 1;
        self.history.push(rec);
        Ok(())
    }

    /// Refits every stale model and swaps in the new snapshot. Returns how
    /// many models were refit.
    pub fn refresh(&mut self) -> usize {
        if self.stale.is_empty() {
            return 0;
        }
        let mut next = (*self.fits).clone();
        let stale = std::mem::take(&mut self.stale);
        for key in &stale {
            let model = self.family.fit(&self.samples[key]);
            next.insert(*key, model);
        }
        self.fits = Arc::new(next);
        self.refits += stale.len() as u64;
        stale.len()
    }

    pub fn refit_count(&self) -> u64 {
        self.refits
    }

    pub fn sample_count(&self, function: usize) -> u64 {
        self.records_per_fn[function]
    }

    pub fn history(&self) -> &[TaskRecord] {
        &self.history
    }

    fn perf(&self, e: usize) -> f64 {
        self.endpoints[e].perf_factor
    }

    /// Predicted execution time and output size of `function` on endpoint `e`.
    pub fn predict_exec(&mut self, function: usize, e: usize, input_size: u64) -> ExecEstimate {
        let est = self.predict_exec_quiet(function, e, input_size);
        if est.source == EstimateSource::Declared && self.warned.insert(function) {
            log::info!(
                "no history or hint for `{}`; using the scenario's declared cost",
                self.functions[function].name
            );
        }
        est
    }

    /// Same as [`predict_exec`](Self::predict_exec) without logging.
    pub fn predict_exec_quiet(&self, function: usize, e: usize, input_size: u64) -> ExecEstimate {
        let x = input_size as f64;
        let output_bytes = self.predict_output(function, x);
        if let Some(model) = self.fits.get(&(function, e)) {
            return ExecEstimate {
                seconds: model.predict(x),
                output_bytes,
                source: EstimateSource::Model,
            };
        }
        let donor = (0..self.endpoints.len())
            .filter(|&o| self.fits.contains_key(&(function, o)))
            .max_by_key(|&o| (self.samples.get(&(function, o)).map_or(0, Vec::len), std::cmp::Reverse(o)));
        if let Some(o) = donor {
            let base = self.fits[&(function, o)].predict(x);
            return ExecEstimate {
                seconds: base * self.perf(e) / self.perf(o),
                output_bytes,
                source: EstimateSource::CrossEndpoint,
            };
        }
        let profile = &self.functions[function];
        if let Some(hint) = profile.cost_hint {
            return ExecEstimate {
                seconds: hint.estimate(input_size) * self.perf(e),
                output_bytes,
                source: EstimateSource::CostHint,
            };
        }
        if let Some(d) = profile.declared {
            return ExecEstimate {
                seconds: (d.fixed_seconds + d.seconds_per_byte * x) * self.perf(e),
                output_bytes,
                source: EstimateSource::Declared,
            };
        }
        ExecEstimate {
            seconds: 0.0,
            output_bytes,
            source: EstimateSource::Unknown,
        }
    }

    fn predict_output(&self, function: usize, input: f64) -> f64 {
        let (sum, n) = self.ratio_sums[function];
        if n > 0 {
            return sum / n as f64 * input;
        }
        self.functions[function]
            .declared
            .map_or(0.0, |d| d.output_ratio * input)
    }

    /// Per-endpoint success rate of `function`, smoothed so that endpoints
    /// without history sit at one half.
    pub fn success_rates(&self, function: usize) -> Vec<f64> {
        (0..self.endpoints.len())
            .map(|e| {
                let o = self.outcomes.get(&(function, e)).copied().unwrap_or_default();
                (o.successes as f64 + 1.0) / (o.total as f64 + 2.0)
            })
            .collect()
    }
}

/// One completed transfer as seen by the transfer profiler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferObservation {
    pub size: u64,
    pub concurrent: usize,
    pub latency: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferModel {
    pub latency: f64,
    pub bandwidth: f64,
    pub concurrency_penalty: f64,
}

impl TransferModel {
    fn from_link(l: &Link) -> Self {
        Self {
            latency: l.latency,
            bandwidth: l.bandwidth,
            concurrency_penalty: l.concurrency_penalty,
        }
    }

    pub fn predict(&self, size: u64, concurrent: usize) -> f64 {
        let factor = 1.0 + (self.concurrency_penalty - 1.0) * concurrent.saturating_sub(1) as f64;
        self.latency + size as f64 * factor / self.bandwidth
    }

    /// Fits latency as the mean observed latency, and the byte-moving phase
    /// as `size * (1/bw) + size * (k - 1) * (penalty - 1)/bw` by least
    /// squares. Falls back to `prior` for whatever the data cannot pin down.
    pub fn fit(obs: &[TransferObservation], prior: Option<&TransferModel>) -> Option<Self> {
        if obs.is_empty() {
            return prior.copied();
        }
        let latency = obs.iter().map(|o| o.latency).sum::<f64>() / obs.len() as f64;
        let rows: Vec<(f64, f64, f64)> = obs
            .iter()
            .filter(|o| o.size > 0)
            .map(|o| {
                let s = o.size as f64;
                (s, s * o.concurrent.saturating_sub(1) as f64, (o.duration - o.latency).max(0.0))
            })
            .collect();
        let prior_penalty = prior.map_or(1.0, |p| p.concurrency_penalty);
        if rows.is_empty() {
            let bandwidth = prior.map(|p| p.bandwidth)?;
            return Some(Self {
                latency,
                bandwidth,
                concurrency_penalty: prior_penalty,
            });
        }
        let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(x1, x2, y) in &rows {
            a11 += x1 * x1;
            a12 += x1 * x2;
            a22 += x2 * x2;
            b1 += x1 * y;
            b2 += x2 * y;
        }
        let det = a11 * a22 - a12 * a12;
        let two_regressors = a22 > 0.0 && det.abs() > 1e-9 * a11 * a22;
        let (inv_bw, penalty) = if two_regressors {
            let b = (b1 * a22 - b2 * a12) / det;
            let c = (a11 * b2 - a12 * b1) / det;
            (b, if b > 0.0 { (1.0 + c / b).max(1.0) } else { prior_penalty })
        } else {
            let mut num = 0.0;
            let mut den = 0.0;
            for &(x1, x2, y) in &rows {
                let z = x1 + (prior_penalty - 1.0) * x2;
                num += z * y;
                den += z * z;
            }
            (num / den, prior_penalty)
        };
        if inv_bw.is_nan() || inv_bw <= 0.0 {
            return prior.copied();
        }
        Some(Self {
            latency,
            bandwidth: 1.0 / inv_bw,
            concurrency_penalty: penalty,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TransferProfiler {
    n: usize,
    fallback: Vec<Option<TransferModel>>,
    observations: Vec<Vec<TransferObservation>>,
    models: Vec<Option<TransferModel>>,
    stale: BTreeSet<usize>,
    unknown: BTreeSet<usize>,
    pub probe_size: u64,
}

impl TransferProfiler {
    /// `matrix[src][dst]` is the declared link, used until observations arrive.
    pub fn new(n: usize, matrix: impl Fn(usize, usize) -> Option<Link>) -> Self {
        let mut fallback = vec![None; n * n];
        for s in 0..n {
            for d in 0..n {
                if s != d {
                    fallback[s * n + d] = matrix(s, d).map(|l| TransferModel::from_link(&l));
                }
            }
        }
        Self {
            n,
            models: fallback.clone(),
            fallback,
            observations: vec![Vec::new(); n * n],
            stale: BTreeSet::new(),
            unknown: BTreeSet::new(),
            probe_size: 10_000_000,
        }
    }

    pub fn observe(&mut self, src: usize, dst: usize, obs: TransferObservation) {
        let k = src * self.n + dst;
        self.observations[k].push(obs);
        self.unknown.remove(&k);
        self.stale.insert(k);
    }

    pub fn refresh(&mut self) -> usize {
        let stale = std::mem::take(&mut self.stale);
        for &k in &stale {
            self.models[k] = TransferModel::fit(&self.observations[k], self.fallback[k].as_ref());
        }
        stale.len()
    }

    pub fn has_history(&self, src: usize, dst: usize) -> bool {
        !self.observations[src * self.n + dst].is_empty()
    }

    /// True when the pair has no observations and no failed probe on record.
    pub fn needs_probe(&self, src: usize, dst: usize) -> bool {
        let k = src * self.n + dst;
        src != dst && self.observations[k].is_empty() && !self.unknown.contains(&k)
    }

    pub fn mark_probe_failed(&mut self, src: usize, dst: usize) {
        self.unknown.insert(src * self.n + dst);
    }

    pub fn model(&self, src: usize, dst: usize) -> Option<&TransferModel> {
        self.models.get(src * self.n + dst).and_then(|m| m.as_ref())
    }

    /// Predicted seconds to move `size` bytes with `concurrent` streams.
    /// Callers short-circuit `src == dst` themselves.
    pub fn predict_transfer(&self, src: usize, dst: usize, size: u64, concurrent: usize) -> f64 {
        debug_assert!(src != dst);
        match self.model(src, dst) {
            Some(m) => m.predict(size, concurrent.max(1)),
            None => f64::INFINITY,
        }
    }

    /// Placement-independent staging estimate: bytes times the mean inverse
    /// bandwidth over ordered pairs, plus the mean latency.
    pub fn mean_staging_time(&self, bytes: u64) -> f64 {
        if bytes == 0 {
            return 0.0;
        }
        let mut inv_bw = 0.0;
        let mut lat = 0.0;
        let mut count = 0usize;
        for m in self.models.iter().flatten() {
            inv_bw += 1.0 / m.bandwidth;
            lat += m.latency;
            count += 1;
        }
        if count == 0 {
            return 0.0;
        }
        bytes as f64 * inv_bw / count as f64 + lat / count as f64
    }
}

/// Eq-2 style averages for one task: `(mean staging time, mean exec time)`
/// over all endpoints.
pub fn average_costs(
    exec: &ExecProfiler,
    transfer: &TransferProfiler,
    function: usize,
    input_bytes: u64,
    endpoints: usize,
) -> (f64, f64) {
    if endpoints == 0 {
        return (0.0, 0.0);
    }
    let w_bar = (0..endpoints)
        .map(|e| exec.predict_exec_quiet(function, e, input_bytes).seconds)
        .sum::<f64>()
        / endpoints as f64;
    let d_bar = if endpoints > 1 {
        transfer.mean_staging_time(input_bytes)
    } else {
        0.0
    };
    (d_bar, w_bar)
}
