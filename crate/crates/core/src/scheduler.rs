//! Placement decisions: Capacity, Locality and DHA, plus failure reassignment.
//!
//! Everything here is a pure function over a snapshot that the engine builds;
//! none of it touches the clock or the event queue.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt;
use std::str::FromStr;

use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dag::{Dag, DagError, TaskId};

#[derive(Debug, Error, PartialEq)]
pub enum SchedError {
    #[error("no capacity: every endpoint reports zero workers")]
    NoCapacity,
    #[error(transparent)]
    Dag(#[from] DagError),
    #[error("unknown scheduler `{0}` (expected capacity, locality or dha)")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulerKind {
    Capacity,
    Locality,
    Dha,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 3] = [Self::Capacity, Self::Locality, Self::Dha];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Capacity => "capacity",
            Self::Locality => "locality",
            Self::Dha => "dha",
        }
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchedulerKind {
    type Err = SchedError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "capacity" => Ok(Self::Capacity),
            "locality" => Ok(Self::Locality),
            "dha" => Ok(Self::Dha),
            _ => Err(SchedError::UnknownKind(s.to_string())),
        }
    }
}

/// Splits `m` tasks across endpoints in proportion to `capacities` using
/// largest remainders, so the parts always sum to `m`. Remainder ties go to
/// the larger capacity, then the lower index.
pub fn capacity_partition(m: usize, capacities: &[u64]) -> Result<Vec<usize>, SchedError> {
    let total: u128 = capacities.iter().map(|&c| c as u128).sum();
    if total == 0 {
        return Err(SchedError::NoCapacity);
    }
    let mut parts = Vec::with_capacity(capacities.len());
    let mut rems = Vec::with_capacity(capacities.len());
    for (i, &c) in capacities.iter().enumerate() {
        let num = m as u128 * c as u128;
        parts.push((num / total) as usize);
        rems.push((num % total, c, i));
    }
    let leftover = m - parts.iter().sum::<usize>();
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
    for &(_, _, i) in rems.iter().take(leftover) {
        parts[i] += 1;
    }
    Ok(parts)
}

/// Cuts `order` into consecutive blocks sized by [`capacity_partition`] and
/// hands them to endpoints in declaration order.
pub fn capacity_assign(order: &[TaskId], capacities: &[u64]) -> Result<Vec<(TaskId, usize)>, SchedError> {
    let parts = capacity_partition(order.len(), capacities)?;
    let mut out = Vec::with_capacity(order.len());
    let mut it = order.iter();
    for (e, &n) in parts.iter().enumerate() {
        out.extend(it.by_ref().take(n).map(|&t| (t, e)));
    }
    Ok(out)
}

/// Offline Capacity schedule over the whole graph.
pub fn capacity_schedule(dag: &Dag, capacities: &[u64]) -> Result<Vec<(TaskId, usize)>, SchedError> {
    capacity_assign(&dag.dfs_order(), capacities)
}

/// One endpoint as Locality sees it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalityView {
    pub idle_workers: u32,
    /// Bytes of the task's inputs not already resident on this endpoint.
    pub missing_bytes: u64,
}

/// Picks the idle endpoint that needs the fewest bytes moved; ties go to
/// more idle workers, then the lower index. `None` when nothing is idle.
pub fn locality_select(views: &[LocalityView]) -> Option<usize> {
    views
        .iter()
        .enumerate()
        .filter(|(_, v)| v.idle_workers > 0)
        .min_by_key(|(i, v)| (v.missing_bytes, Reverse(v.idle_workers), *i))
        .map(|(i, _)| i)
}

/// Upward-rank priorities indexed by task id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PriorityTable {
    values: Vec<f64>,
}

impl PriorityTable {
    pub fn get(&self, task: TaskId) -> f64 {
        self.values.get(task).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// `priority(t) = d̄_t + w̄_t + max(priority(s) for s in succ(t))`, with the
/// max over no successors taken as 0. `costs(t)` returns `(d̄_t, w̄_t)`.
pub fn compute_priorities(
    dag: &Dag,
    mut costs: impl FnMut(TaskId) -> (f64, f64),
) -> Result<PriorityTable, SchedError> {
    let order = dag.topological_order()?;
    let mut values = vec![0.0; dag.len()];
    for &t in order.iter().rev() {
        let tail = dag
            .successors(t)
            .iter()
            .map(|&s| values[s])
            .fold(0.0_f64, f64::max);
        let (d, w) = costs(t);
        values[t] = d + w + tail;
    }
    Ok(PriorityTable { values })
}

/// Predicted times at which each worker slot of one endpoint frees up.
#[derive(Debug, Clone, Default)]
pub struct Availability {
    slots: BinaryHeap<Reverse<OrderedFloat<f64>>>,
}

impl Availability {
    /// `running_finishes` are predicted completion times of tasks already on
    /// the endpoint. With `slots` workers, a worker frees when enough of those
    /// tasks are done; pending reductions are covered by keeping only the
    /// latest `slots` finishes.
    pub fn new(now: f64, slots: u32, running_finishes: &[f64]) -> Self {
        let slots = slots as usize;
        let mut finishes: Vec<f64> = running_finishes.iter().map(|&f| f.max(now)).collect();
        finishes.sort_by(|a, b| b.total_cmp(a));
        finishes.truncate(slots);
        let idle = slots - finishes.len();
        let mut heap = BinaryHeap::with_capacity(slots);
        heap.extend(finishes.into_iter().map(|f| Reverse(OrderedFloat(f))));
        heap.extend(std::iter::repeat_n(Reverse(OrderedFloat(now)), idle));
        Self { slots: heap }
    }

    /// Earliest time a worker is free; infinite with no workers at all.
    pub fn earliest(&self) -> f64 {
        self.slots.peek().map_or(f64::INFINITY, |r| r.0 .0)
    }

    /// Occupies the earliest slot until `finish`.
    pub fn commit(&mut self, finish: f64) {
        if self.slots.pop().is_some() {
            self.slots.push(Reverse(OrderedFloat(finish)));
        }
    }

    pub fn slots(&self) -> usize {
        self.slots.len()
    }
}

/// Earliest finish time of a task on one endpoint.
pub fn eft(now: f64, staging: f64, avail: &Availability, exec: f64) -> f64 {
    (now + staging).max(avail.earliest()) + exec
}

/// Returns `(endpoint, eft)` minimizing EFT; ties go to the lower index.
/// `staging[e]` and `exec[e]` are predicted seconds for endpoint `e`.
pub fn dha_select_endpoint(now: f64, staging: &[f64], exec: &[f64], avail: &[Availability]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for e in 0..avail.len() {
        let f = eft(now, staging[e], &avail[e], exec[e]);
        if f < best.1 || (e == 0 && best.1.is_infinite()) {
            best = (e, f);
        }
    }
    best
}

/// Per-endpoint queue of staged tasks waiting for a worker, highest
/// priority first.
#[derive(Debug, Clone, Default)]
pub struct DelayQueue {
    order: BTreeSet<(Reverse<OrderedFloat<f64>>, TaskId)>,
    priority: BTreeMap<TaskId, f64>,
}

impl DelayQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, task: TaskId, priority: f64) {
        if let Some(old) = self.priority.insert(task, priority) {
            self.order.remove(&(Reverse(OrderedFloat(old)), task));
        }
        self.order.insert((Reverse(OrderedFloat(priority)), task));
    }

    pub fn remove(&mut self, task: TaskId) -> bool {
        match self.priority.remove(&task) {
            Some(p) => self.order.remove(&(Reverse(OrderedFloat(p)), task)),
            None => false,
        }
    }

    pub fn contains(&self, task: TaskId) -> bool {
        self.priority.contains_key(&task)
    }

    pub fn pop(&mut self) -> Option<TaskId> {
        let (_, t) = self.order.pop_first()?;
        self.priority.remove(&t);
        Some(t)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Task ids, highest priority first.
    pub fn iter(&self) -> impl Iterator<Item = TaskId> + '_ {
        self.order.iter().map(|(_, t)| *t)
    }
}

/// Pops up to `idle_workers` tasks, highest priority first.
pub fn delay_dispatch(queue: &mut DelayQueue, idle_workers: u32) -> Vec<TaskId> {
    let mut out = Vec::new();
    while out.len() < idle_workers as usize {
        match queue.pop() {
            Some(t) => out.push(t),
            None => break,
        }
    }
    out
}

/// An undispatched task considered for stealing.
#[derive(Debug, Clone, PartialEq)]
pub struct StealCandidate {
    pub task: TaskId,
    pub priority: f64,
    pub incumbent: usize,
    /// Predicted seconds until inputs are on each endpoint, counted from now.
    pub staging: Vec<f64>,
    pub exec: Vec<f64>,
    /// Extra transfer time of inputs already staged at the incumbent, per
    /// target endpoint.
    pub switch_cost: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Move {
    pub task: TaskId,
    pub from: usize,
    pub to: usize,
    pub eft_before: f64,
    pub eft_after: f64,
}

/// Revisits undispatched tasks in descending priority. `avail` must hold
/// running work only; each candidate is committed to whichever endpoint it
/// ends on so later candidates see the load. A task moves only when the
/// new EFT beats the incumbent's by more than the switch cost.
pub fn dha_reschedule(now: f64, mut candidates: Vec<StealCandidate>, avail: &mut [Availability]) -> Vec<Move> {
    candidates.sort_by(|a, b| {
        b.priority
            .total_cmp(&a.priority)
            .then(a.task.cmp(&b.task))
    });
    let mut moves = Vec::new();
    for c in candidates {
        let inc = eft(now, c.staging[c.incumbent], &avail[c.incumbent], c.exec[c.incumbent]);
        let (best, best_eft) = dha_select_endpoint(now, &c.staging, &c.exec, avail);
        let target = if best != c.incumbent && inc - best_eft > c.switch_cost[best] {
            moves.push(Move {
                task: c.task,
                from: c.incumbent,
                to: best,
                eft_before: inc,
                eft_after: best_eft,
            });
            (best, best_eft)
        } else {
            (c.incumbent, inc)
        };
        avail[target.0].commit(target.1);
    }
    moves
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetryPlan {
    /// Go through the configured scheduler again.
    UseScheduler,
    Endpoint(usize),
    Terminal,
}

/// Decides where a failed task goes next. `failed_on` lists the endpoint of
/// every failed attempt so far, oldest first.
pub fn reassign_failed(failed_on: &[usize], success_rates: &[f64], max_attempts: u32) -> RetryPlan {
    let distinct: BTreeSet<usize> = failed_on.iter().copied().collect();
    if distinct.len() >= success_rates.len() || failed_on.len() as u32 >= max_attempts {
        return RetryPlan::Terminal;
    }
    if failed_on.len() <= 1 {
        return RetryPlan::UseScheduler;
    }
    let mut best: Option<(usize, f64)> = None;
    for (e, &r) in success_rates.iter().enumerate() {
        if distinct.contains(&e) {
            continue;
        }
        if best.is_none_or(|(_, b)| r > b) {
            best = Some((e, r));
        }
    }
    best.map_or(RetryPlan::Terminal, |(e, _)| RetryPlan::Endpoint(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dag::FunctionDef;

    fn dag_with(edges: &[(usize, usize)], n: usize) -> Dag {
        let mut dag = Dag::new();
        let f = dag.add_function(FunctionDef::new("f")).unwrap();
        for t in 0..n {
            let deps: Vec<_> = edges.iter().filter(|e| e.1 == t).map(|e| e.0).collect();
            dag.submit_task(f, &deps, &[], 0).unwrap();
        }
        dag
    }

    #[test]
    fn partition_examples() {
        assert_eq!(capacity_partition(8, &[5, 2, 1]).unwrap(), vec![5, 2, 1]);
        assert_eq!(capacity_partition(0, &[5, 2, 1]).unwrap(), vec![0, 0, 0]);
        assert_eq!(capacity_partition(10, &[3, 3, 3]).unwrap(), vec![4, 3, 3]);
        assert_eq!(capacity_partition(3, &[0, 0]), Err(SchedError::NoCapacity));
    }

    #[test]
    fn partition_tie_prefers_larger_capacity() {
        // quotas 1.5 and 0.5 with remainder tie broken toward the bigger share
        assert_eq!(capacity_partition(1, &[1, 1]).unwrap(), vec![1, 0]);
        assert_eq!(capacity_partition(2, &[1, 3]).unwrap(), vec![0, 2]);
    }

    #[test]
    fn capacity_figure_instance() {
        // 0->1, 0->2, 1->3, 2->4, 5->6, 7
        let dag = dag_with(&[(0, 1), (0, 2), (1, 3), (2, 4), (5, 6)], 8);
        let plan = capacity_schedule(&dag, &[5, 2, 1]).unwrap();
        let on = |e: usize| -> BTreeSet<usize> { plan.iter().filter(|p| p.1 == e).map(|p| p.0).collect() };
        assert_eq!(on(0), BTreeSet::from([0, 1, 2, 3, 4]));
        assert_eq!(on(1), BTreeSet::from([5, 6]));
        assert_eq!(on(2), BTreeSet::from([7]));
    }

    #[test]
    fn capacity_chain_split() {
        let dag = dag_with(&[(0, 1), (1, 2), (2, 3)], 4);
        let plan = capacity_schedule(&dag, &[1, 1]).unwrap();
        assert_eq!(plan, vec![(0, 0), (1, 0), (2, 1), (3, 1)]);
        let single = capacity_schedule(&dag, &[7]).unwrap();
        assert!(single.iter().all(|p| p.1 == 0));
    }

    #[test]
    fn locality_examples() {
        const GB: u64 = 1_000_000_000;
        let v = |idle, missing| LocalityView {
            idle_workers: idle,
            missing_bytes: missing,
        };
        assert_eq!(locality_select(&[v(1, 0), v(1, 10 * GB)]), Some(0));
        assert_eq!(locality_select(&[v(1, 4 * GB), v(1, 6 * GB)]), Some(0));
        assert_eq!(locality_select(&[v(0, 4 * GB), v(1, 6 * GB)]), Some(1));
        assert_eq!(locality_select(&[v(0, 0), v(0, 0)]), None);
        assert_eq!(locality_select(&[v(1, 5), v(3, 5)]), Some(1));
    }

    #[test]
    fn priority_examples() {
        let sink = dag_with(&[], 1);
        assert_eq!(compute_priorities(&sink, |_| (2.0, 3.0)).unwrap().get(0), 5.0);

        let chain = dag_with(&[(0, 1)], 2);
        let p = compute_priorities(&chain, |t| if t == 1 { (3.0, 4.0) } else { (1.0, 2.0) }).unwrap();
        assert_eq!((p.get(1), p.get(0)), (7.0, 10.0));

        let fork = dag_with(&[(0, 1), (0, 2)], 3);
        let p = compute_priorities(&fork, |t| match t {
            0 => (1.0, 2.0),
            1 => (3.0, 4.0),
            _ => (4.0, 5.0),
        })
        .unwrap();
        assert_eq!((p.get(1), p.get(2), p.get(0)), (7.0, 9.0, 12.0));
    }

    #[test]
    fn eft_examples() {
        let idle = || Availability::new(0.0, 1, &[]);
        assert_eq!(dha_select_endpoint(0.0, &[0.0], &[3.0], &[idle()]).0, 0);
        let (e, f) = dha_select_endpoint(0.0, &[0.0, 1.0], &[10.0, 5.0], &[idle(), idle()]);
        assert_eq!((e, f), (1, 6.0));
        let busy = Availability::new(0.0, 1, &[20.0]);
        assert_eq!(dha_select_endpoint(0.0, &[0.0, 1.0], &[10.0, 5.0], &[idle(), busy]).0, 0);
    }

    #[test]
    fn eft_ties_and_empty_endpoints() {
        let idle = || Availability::new(0.0, 1, &[]);
        let none = Availability::new(0.0, 0, &[]);
        assert_eq!(none.earliest(), f64::INFINITY);
        assert_eq!(dha_select_endpoint(0.0, &[0.0, 0.0], &[4.0, 4.0], &[idle(), idle()]).0, 0);
        assert_eq!(dha_select_endpoint(0.0, &[0.0, 0.0], &[4.0, 4.0], &[none, idle()]).0, 1);
    }

    #[test]
    fn availability_with_pending_reduction() {
        // three running tasks, but only one worker survives the cut
        let a = Availability::new(0.0, 1, &[5.0, 9.0, 2.0]);
        assert_eq!(a.slots(), 1);
        assert_eq!(a.earliest(), 9.0);
        let mut b = Availability::new(1.0, 3, &[4.0]);
        assert_eq!(b.earliest(), 1.0);
        b.commit(7.0);
        b.commit(8.0);
        assert_eq!(b.earliest(), 4.0);
    }

    #[test]
    fn delay_dispatch_examples() {
        let mut q = DelayQueue::new();
        q.insert(1, 5.0);
        q.insert(2, 9.0);
        assert_eq!(delay_dispatch(&mut q, 0), Vec::<TaskId>::new());
        assert_eq!(delay_dispatch(&mut q, 1), vec![2]);
        q.insert(3, 1.0);
        assert_eq!(delay_dispatch(&mut q, 3), vec![1, 3]);
        assert!(q.is_empty());
    }

    #[test]
    fn delay_queue_reinsert_updates_priority() {
        let mut q = DelayQueue::new();
        q.insert(1, 5.0);
        q.insert(2, 4.0);
        q.insert(2, 6.0);
        assert_eq!(q.len(), 2);
        assert_eq!(q.iter().collect::<Vec<_>>(), vec![2, 1]);
        assert!(q.remove(2));
        assert!(!q.remove(2));
    }

    fn cand(task: TaskId, incumbent: usize, staging: Vec<f64>, exec: Vec<f64>, switch: Vec<f64>) -> StealCandidate {
        StealCandidate {
            task,
            priority: 100.0 - task as f64,
            incumbent,
            staging,
            exec,
            switch_cost: switch,
        }
    }

    #[test]
    fn steal_to_grown_endpoint() {
        // EP0 fully busy for a long time, EP1 just gained two idle workers
        let mut avail = vec![Availability::new(0.0, 1, &[100.0]), Availability::new(0.0, 2, &[])];
        let cands = (0..10)
            .map(|t| cand(t, 0, vec![0.0, 1.0], vec![10.0, 10.0], vec![0.0, 1.0]))
            .collect();
        let moves = dha_reschedule(0.0, cands, &mut avail);
        assert!(!moves.is_empty());
        assert!(moves.iter().all(|m| m.to == 1 && m.eft_after < m.eft_before));
    }

    #[test]
    fn no_steal_when_balanced() {
        let mut avail = vec![Availability::new(0.0, 1, &[]), Availability::new(0.0, 1, &[])];
        let cands = vec![
            cand(0, 0, vec![0.0, 0.0], vec![10.0, 10.0], vec![0.0, 0.0]),
            cand(1, 1, vec![0.0, 0.0], vec![10.0, 10.0], vec![0.0, 0.0]),
        ];
        assert!(dha_reschedule(0.0, cands, &mut avail).is_empty());
    }

    #[test]
    fn no_steal_when_transfer_eats_gain() {
        // incumbent EFT 30, other endpoint EFT 1 + 25 + 0 = 26, gain 4 < switch 25
        let mut avail = vec![Availability::new(0.0, 1, &[20.0]), Availability::new(0.0, 1, &[])];
        let cands = vec![cand(0, 0, vec![0.0, 25.0], vec![10.0, 1.0], vec![0.0, 25.0])];
        assert!(dha_reschedule(0.0, cands, &mut avail).is_empty());
    }

    #[test]
    fn reassignment_rules() {
        assert_eq!(reassign_failed(&[0], &[0.5, 0.5], 8), RetryPlan::UseScheduler);
        assert_eq!(reassign_failed(&[1, 1], &[0.9, 0.5], 8), RetryPlan::Endpoint(0));
        assert_eq!(reassign_failed(&[2, 2], &[0.9, 0.95, 0.5], 8), RetryPlan::Endpoint(1));
        assert_eq!(reassign_failed(&[0, 1], &[0.9, 0.5], 8), RetryPlan::Terminal);
        assert_eq!(reassign_failed(&[0, 0, 0], &[0.9, 0.5], 3), RetryPlan::Terminal);
    }

    #[test]
    fn kind_parses() {
        assert_eq!("DHA".parse::<SchedulerKind>().unwrap(), SchedulerKind::Dha);
        assert!("heft".parse::<SchedulerKind>().is_err());
    }
}
