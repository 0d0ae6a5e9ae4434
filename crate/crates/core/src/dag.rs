//! Workflow graphs of function tasks.
//!
//! Tasks are added one at a time and may only depend on tasks that already
//! exist, so the graph stays acyclic by construction and can keep growing
//! while a run is in progress.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest serialized argument payload that may travel with a task.
pub const MAX_INLINE_ARGS_BYTES: u64 = 10 * 1024 * 1024;

pub type TaskId = usize;
pub type FunctionId = usize;
pub type DataId = usize;

#[derive(Debug, Error, PartialEq)]
pub enum DagError {
    #[error("unknown dependency handle {0}")]
    UnknownDependency(TaskId),
    #[error("unknown task {0}")]
    UnknownTask(TaskId),
    #[error("unknown function id {0}")]
    UnknownFunction(FunctionId),
    #[error("inline arguments of {size} bytes exceed the 10 MB limit ({limit} bytes); pass the payload as a data item")]
    InlineArgsTooLarge { size: u64, limit: u64 },
    #[error("function `{0}` is already defined")]
    DuplicateFunction(String),
    #[error("cost hint of function `{0}` has a negative component")]
    NegativeCostHint(String),
    #[error("illegal state transition for task {task}: {from} -> {to}")]
    IllegalTransition {
        task: TaskId,
        from: TaskState,
        to: TaskState,
    },
    #[error("cycle detected among {0} tasks")]
    Cycle(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ResourceKind {
    #[default]
    Cpu,
    Gpu,
    Any,
}

/// Cost estimate used when a function has no execution history yet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostHint {
    pub seconds_per_byte: f64,
    pub fixed_seconds: f64,
}

impl CostHint {
    pub fn estimate(&self, input_size: u64) -> f64 {
        self.fixed_seconds + self.seconds_per_byte * input_size as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionDef {
    pub name: String,
    pub resource_kind: ResourceKind,
    pub cost_hint: Option<CostHint>,
}

impl FunctionDef {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            resource_kind: ResourceKind::Cpu,
            cost_hint: None,
        }
    }

    pub fn with_cost_hint(mut self, fixed_seconds: f64, seconds_per_byte: f64) -> Self {
        self.cost_hint = Some(CostHint {
            seconds_per_byte,
            fixed_seconds,
        });
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TaskState {
    Pending,
    Staging,
    Ready,
    Queued,
    Running,
    Done,
    Failed,
}

impl TaskState {
    /// The forward path PENDING -> STAGING -> READY -> QUEUED -> RUNNING ends
    /// in DONE or FAILED. A FAILED task may be retried through STAGING.
    /// Staging itself can fail when a transfer exhausts its retries, and a
    /// READY task that is moved to another endpoint goes back to STAGING.
    pub fn can_transition_to(self, next: TaskState) -> bool {
        use TaskState::*;
        matches!(
            (self, next),
            (Pending, Staging)
                | (Staging, Ready)
                | (Ready, Queued)
                | (Queued, Running)
                | (Running, Done)
                | (Running, Failed)
                | (Failed, Staging)
                | (Staging, Failed)
                | (Ready, Staging)
        )
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, TaskState::Done | TaskState::Failed)
    }
}

impl fmt::Display for TaskState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TaskState::Pending => "PENDING",
            TaskState::Staging => "STAGING",
            TaskState::Ready => "READY",
            TaskState::Queued => "QUEUED",
            TaskState::Running => "RUNNING",
            TaskState::Done => "DONE",
            TaskState::Failed => "FAILED",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub struct TaskNode {
    pub task_id: TaskId,
    pub function: FunctionId,
    pub deps: BTreeSet<TaskId>,
    pub inline_args_size: u64,
    pub file_deps: Vec<DataId>,
    pub output: Option<DataId>,
    pub state: TaskState,
    pub assigned_endpoint: Option<usize>,
    pub attempt_count: u32,
    deps_remaining: usize,
    staging_remaining: usize,
}

impl TaskNode {
    pub fn deps_satisfied(&self) -> bool {
        self.deps_remaining == 0
    }

    pub fn staging_remaining(&self) -> usize {
        self.staging_remaining
    }
}

/// What a dependency completion did to a waiting task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Readiness {
    /// Other dependencies are still outstanding.
    Waiting,
    /// All dependencies are done; the task now needs placement and staging.
    DepsSatisfied,
    /// Dependencies are done and nothing is left to stage.
    Ready,
    /// The task is already terminal, nothing changed.
    Ignored,
}

#[derive(Debug, Clone, Default)]
pub struct Dag {
    functions: Vec<FunctionDef>,
    function_index: BTreeMap<String, FunctionId>,
    nodes: Vec<TaskNode>,
    successors: Vec<BTreeSet<TaskId>>,
    sources: BTreeSet<TaskId>,
    sinks: BTreeSet<TaskId>,
}

impl Dag {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_function(&mut self, def: FunctionDef) -> Result<FunctionId, DagError> {
        if self.function_index.contains_key(&def.name) {
            return Err(DagError::DuplicateFunction(def.name));
        }
        if let Some(hint) = def.cost_hint {
            if hint.fixed_seconds < 0.0 || hint.seconds_per_byte < 0.0 {
                return Err(DagError::NegativeCostHint(def.name));
            }
        }
        let id = self.functions.len();
        self.function_index.insert(def.name.clone(), id);
        self.functions.push(def);
        Ok(id)
    }

    pub fn function(&self, id: FunctionId) -> &FunctionDef {
        &self.functions[id]
    }

    pub fn functions(&self) -> &[FunctionDef] {
        &self.functions
    }

    pub fn function_id(&self, name: &str) -> Option<FunctionId> {
        self.function_index.get(name).copied()
    }

    /// Adds a task depending on the given handles. The new task starts in
    /// PENDING; dependencies that are already DONE count as satisfied.
    pub fn submit_task(
        &mut self,
        function: FunctionId,
        dep_handles: &[TaskId],
        file_deps: &[DataId],
        inline_args_size: u64,
    ) -> Result<TaskId, DagError> {
        if function >= self.functions.len() {
            return Err(DagError::UnknownFunction(function));
        }
        if inline_args_size > MAX_INLINE_ARGS_BYTES {
            return Err(DagError::InlineArgsTooLarge {
                size: inline_args_size,
                limit: MAX_INLINE_ARGS_BYTES,
            });
        }
        if let Some(&bad) = dep_handles.iter().find(|&&d| d >= self.nodes.len()) {
            return Err(DagError::UnknownDependency(bad));
        }

        let task_id = self.nodes.len();
        let deps: BTreeSet<TaskId> = dep_handles.iter().copied().collect();
        let deps_remaining = deps
            .iter()
            .filter(|&&d| self.nodes[d].state != TaskState::Done)
            .count();
        for &d in &deps {
            self.successors[d].insert(task_id);
            self.sinks.remove(&d);
        }
        if deps.is_empty() {
            self.sources.insert(task_id);
        }
        self.sinks.insert(task_id);
        self.successors.push(BTreeSet::new());
        self.nodes.push(TaskNode {
            task_id,
            function,
            deps,
            inline_args_size,
            file_deps: file_deps.to_vec(),
            output: None,
            state: TaskState::Pending,
            assigned_endpoint: None,
            attempt_count: 0,
            deps_remaining,
            staging_remaining: 0,
        });
        Ok(task_id)
    }

    pub fn set_output(&mut self, task: TaskId, data: DataId) {
        self.nodes[task].output = Some(data);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, task: TaskId) -> &TaskNode {
        &self.nodes[task]
    }

    pub fn get(&self, task: TaskId) -> Option<&TaskNode> {
        self.nodes.get(task)
    }

    pub fn nodes(&self) -> &[TaskNode] {
        &self.nodes
    }

    pub fn successors(&self, task: TaskId) -> &BTreeSet<TaskId> {
        &self.successors[task]
    }

    pub fn sources(&self) -> &BTreeSet<TaskId> {
        &self.sources
    }

    pub fn sinks(&self) -> &BTreeSet<TaskId> {
        &self.sinks
    }

    pub fn state(&self, task: TaskId) -> TaskState {
        self.nodes[task].state
    }

    pub fn set_assigned(&mut self, task: TaskId, endpoint: Option<usize>) {
        self.nodes[task].assigned_endpoint = endpoint;
    }

    pub fn bump_attempts(&mut self, task: TaskId) -> u32 {
        let node = &mut self.nodes[task];
        node.attempt_count += 1;
        node.attempt_count
    }

    /// Moves a task to `next`, rejecting anything outside the transition relation.
    pub fn transition(&mut self, task: TaskId, next: TaskState) -> Result<(), DagError> {
        let node = self.nodes.get_mut(task).ok_or(DagError::UnknownTask(task))?;
        if !node.state.can_transition_to(next) {
            return Err(DagError::IllegalTransition {
                task,
                from: node.state,
                to: next,
            });
        }
        node.state = next;
        Ok(())
    }

    /// Records that one dependency of `task` reached DONE.
    pub fn on_dep_complete(&mut self, task: TaskId) -> Readiness {
        let node = &mut self.nodes[task];
        if node.state.is_terminal() {
            return Readiness::Ignored;
        }
        node.deps_remaining = node.deps_remaining.saturating_sub(1);
        if node.deps_remaining > 0 {
            return Readiness::Waiting;
        }
        if node.state == TaskState::Staging && node.staging_remaining == 0 {
            node.state = TaskState::Ready;
            return Readiness::Ready;
        }
        Readiness::DepsSatisfied
    }

    /// Enters STAGING with `jobs` outstanding transfers. Returns true when the
    /// task became READY immediately because nothing had to move.
    pub fn begin_staging(&mut self, task: TaskId, jobs: usize) -> Result<bool, DagError> {
        self.transition(task, TaskState::Staging)?;
        let node = &mut self.nodes[task];
        node.staging_remaining = jobs;
        if jobs == 0 && node.deps_remaining == 0 {
            node.state = TaskState::Ready;
            return Ok(true);
        }
        Ok(false)
    }

    /// One staging transfer for `task` finished. Returns true on the
    /// STAGING -> READY transition.
    pub fn on_staging_progress(&mut self, task: TaskId) -> bool {
        let node = &mut self.nodes[task];
        if node.state != TaskState::Staging {
            return false;
        }
        node.staging_remaining = node.staging_remaining.saturating_sub(1);
        if node.staging_remaining == 0 && node.deps_remaining == 0 {
            node.state = TaskState::Ready;
            return true;
        }
        false
    }

    /// Restarts staging of a STAGING or READY task that moved to another
    /// endpoint. Returns true when nothing has to move.
    pub fn restage(&mut self, task: TaskId, jobs: usize) -> Result<bool, DagError> {
        if self.nodes[task].state == TaskState::Ready {
            self.transition(task, TaskState::Staging)?;
        } else if self.nodes[task].state != TaskState::Staging {
            return Err(DagError::IllegalTransition {
                task,
                from: self.nodes[task].state,
                to: TaskState::Staging,
            });
        }
        let node = &mut self.nodes[task];
        node.staging_remaining = jobs;
        if jobs == 0 && node.deps_remaining == 0 {
            node.state = TaskState::Ready;
            return Ok(true);
        }
        Ok(false)
    }

    /// Depth-first order from the source tasks. Children are visited in
    /// ascending id and components in ascending order of their smallest source.
    /// A join is entered only after its last parent, so the order is also
    /// topological.
    pub fn dfs_order(&self) -> Vec<TaskId> {
        let mut waiting: Vec<usize> = self.nodes.iter().map(|n| n.deps.len()).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut stack = Vec::new();
        for &root in &self.sources {
            stack.push(root);
            while let Some(t) = stack.pop() {
                order.push(t);
                for &child in self.successors[t].iter().rev() {
                    waiting[child] -= 1;
                    if waiting[child] == 0 {
                        stack.push(child);
                    }
                }
            }
        }
        order
    }

    /// Kahn's algorithm over the current graph.
    pub fn topological_order(&self) -> Result<Vec<TaskId>, DagError> {
        let mut indegree: Vec<usize> = self.nodes.iter().map(|n| n.deps.len()).collect();
        let mut queue: VecDeque<TaskId> = indegree
            .iter()
            .enumerate()
            .filter(|(_, &d)| d == 0)
            .map(|(i, _)| i)
            .collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(t) = queue.pop_front() {
            order.push(t);
            for &s in &self.successors[t] {
                indegree[s] -= 1;
                if indegree[s] == 0 {
                    queue.push_back(s);
                }
            }
        }
        if order.len() != self.nodes.len() {
            return Err(DagError::Cycle(self.nodes.len() - order.len()));
        }
        Ok(order)
    }

    /// Every task reachable from `task`, excluding itself.
    pub fn descendants(&self, task: TaskId) -> BTreeSet<TaskId> {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<TaskId> = self.successors[task].iter().copied().collect();
        while let Some(t) = stack.pop() {
            if seen.insert(t) {
                stack.extend(self.successors[t].iter().copied());
            }
        }
        seen
    }
}
