//! Assembly problem instances: tasks, precedence rules, the additive timing
//! model and tool assignments.
//!
//! A task's deterministic duration is its base time, plus one correction term
//! for every task already done, plus the tool change time when the task needs
//! a different tool than the one currently held.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{IllegalTask, SpecError};

/// Task sets are stored as 64-bit masks.
pub const MAX_TASKS: usize = 64;

/// Zero-based task handle. Displayed (and written to files) one-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaskId(usize);

impl TaskId {
    pub fn from_index(index: usize) -> Self {
        TaskId(index)
    }

    /// One-based constructor; `None` for 0.
    pub fn from_number(number: usize) -> Option<Self> {
        number.checked_sub(1).map(TaskId)
    }

    pub fn index(self) -> usize {
        self.0
    }

    pub fn number(self) -> usize {
        self.0 + 1
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// One-based tool number. "No tool" is `Option::<ToolId>::None`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ToolId(usize);

impl ToolId {
    pub fn new(number: usize) -> Option<Self> {
        (number >= 1).then_some(ToolId(number))
    }

    pub fn number(self) -> usize {
        self.0
    }
}

impl fmt::Display for ToolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Set of tasks as a bit mask (bit `i` is task index `i`).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TaskSet(u64);

impl TaskSet {
    pub const EMPTY: TaskSet = TaskSet(0);

    pub fn from_bits(bits: u64) -> Self {
        TaskSet(bits)
    }

    /// All tasks `0..n`.
    pub fn full(n: usize) -> Self {
        debug_assert!(n <= MAX_TASKS);
        if n == MAX_TASKS {
            TaskSet(u64::MAX)
        } else {
            TaskSet((1u64 << n) - 1)
        }
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn contains(self, task: TaskId) -> bool {
        task.0 < MAX_TASKS && self.0 & (1 << task.0) != 0
    }

    pub fn with(self, task: TaskId) -> Self {
        TaskSet(self.0 | (1 << task.0))
    }

    pub fn insert(&mut self, task: TaskId) {
        self.0 |= 1 << task.0;
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_subset(self, other: TaskSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn difference(self, other: TaskSet) -> Self {
        TaskSet(self.0 & !other.0)
    }

    /// Members in ascending order.
    pub fn iter(self) -> impl Iterator<Item = TaskId> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                return None;
            }
            let i = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            Some(TaskId(i))
        })
    }
}

impl FromIterator<TaskId> for TaskSet {
    fn from_iter<I: IntoIterator<Item = TaskId>>(iter: I) -> Self {
        let mut set = TaskSet::EMPTY;
        for t in iter {
            set.insert(t);
        }
        set
    }
}

/// Totals of a complete sequence under the deterministic timing model.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceTiming {
    pub per_task: Vec<f64>,
    pub total: f64,
    pub tool_changes: usize,
}

/// A validated assembly problem. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct AssemblySpec {
    base_time: Vec<f64>,
    /// `correction[k][i]`: change to task `i`'s duration once task `k` is done.
    correction: Vec<Vec<f64>>,
    predecessors: Vec<TaskSet>,
    tool: Vec<ToolId>,
    num_tools: usize,
    tool_change_time: f64,
    task_names: Option<Vec<String>>,
}

/// On-disk JSON form of an [`AssemblySpec`]. Task and tool numbers are one-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecFile {
    pub num_tasks: usize,
    pub num_tools: usize,
    pub base_time: Vec<f64>,
    pub tool: Vec<i64>,
    pub tool_change_time: f64,
    pub predecessors: BTreeMap<String, Vec<i64>>,
    pub correction: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_names: Option<Vec<String>>,
}

impl AssemblySpec {
    /// The 8-task, 2-tool toy airplane case. Blank correction cells are 0.
    pub fn builtin_airplane() -> Self {
        let base_time = vec![10.0, 7.0, 8.0, 6.0, 12.0, 8.0, 11.0, 9.0];
        let preds: [&[usize]; 8] = [&[], &[1], &[1], &[1], &[1, 4], &[1], &[], &[]];
        // Rows: "task k done"; columns: affected task i.
        let correction = vec![
            vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, -1.0, -1.5, 0.0, -1.0, 0.0, 1.0],
            vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            vec![0.0, -0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            vec![0.0, -1.0, -0.5, 0.0, 0.0, -2.0, 1.0, 0.0],
            vec![0.0; 8],
            vec![0.0; 8],
            vec![0.0; 8],
        ];
        let mut tool = vec![ToolId(1); 8];
        tool[6] = ToolId(2);
        AssemblySpec {
            base_time,
            correction,
            predecessors: preds
                .iter()
                .map(|p| p.iter().map(|&n| TaskId(n - 1)).collect())
                .collect(),
            tool,
            num_tools: 2,
            tool_change_time: 2.0,
            task_names: None,
        }
    }

    /// Resolves `builtin:airplane` or reads a JSON spec file.
    pub fn from_source(source: &str) -> Result<Self, SpecError> {
        if source == "builtin:airplane" {
            Ok(Self::builtin_airplane())
        } else {
            Self::load(source)
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SpecError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| SpecError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, SpecError> {
        let file: SpecFile = serde_json::from_str(text).map_err(|e| SpecError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Self::from_file(file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("spec serializes")
    }

    pub fn to_file(&self) -> SpecFile {
        SpecFile {
            num_tasks: self.num_tasks(),
            num_tools: self.num_tools,
            base_time: self.base_time.clone(),
            tool: self.tool.iter().map(|t| t.0 as i64).collect(),
            tool_change_time: self.tool_change_time,
            predecessors: self
                .predecessors
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    (
                        (i + 1).to_string(),
                        p.iter().map(|t| t.number() as i64).collect(),
                    )
                })
                .collect(),
            correction: self.correction.clone(),
            task_names: self.task_names.clone(),
        }
    }

    /// Validates a parsed spec file; every error names the offending field.
    pub fn from_file(file: SpecFile) -> Result<Self, SpecError> {
        let n = file.num_tasks;
        if n == 0 || n > MAX_TASKS {
            return Err(SpecError::invalid(
                "num_tasks",
                format!("must be in 1..={MAX_TASKS}, got {n}"),
            ));
        }
        if file.num_tools == 0 {
            return Err(SpecError::invalid("num_tools", "must be at least 1"));
        }
        check_len("base_time", file.base_time.len(), n)?;
        for (i, &b) in file.base_time.iter().enumerate() {
            if !(b.is_finite() && b > 0.0) {
                return Err(SpecError::NonPositiveBaseTime {
                    location: format!("base_time[{i}]"),
                    value: b,
                });
            }
        }
        check_len("tool", file.tool.len(), n)?;
        let tool = file
            .tool
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                check_index(&format!("tool[{i}]"), t, file.num_tools).map(ToolId)
            })
            .collect::<Result<Vec<_>, _>>()?;
        if !(file.tool_change_time.is_finite() && file.tool_change_time >= 0.0) {
            return Err(SpecError::invalid(
                "tool_change_time",
                format!("must be finite and >= 0, got {}", file.tool_change_time),
            ));
        }

        let mut predecessors = vec![TaskSet::EMPTY; n];
        for (key, preds) in &file.predecessors {
            let location = format!("predecessors.\"{key}\"");
            let task: i64 = key
                .trim()
                .parse()
                .map_err(|_| SpecError::invalid(&location, "key is not a task number"))?;
            let task = check_index(&location, task, n)? - 1;
            for (j, &p) in preds.iter().enumerate() {
                let p = check_index(&format!("{location}[{j}]"), p, n)? - 1;
                predecessors[task].insert(TaskId(p));
            }
        }

        check_len("correction", file.correction.len(), n)?;
        for (k, row) in file.correction.iter().enumerate() {
            check_len(&format!("correction[{k}]"), row.len(), n)?;
            for (i, &c) in row.iter().enumerate() {
                let location = format!("correction[{k}][{i}]");
                if !c.is_finite() {
                    return Err(SpecError::invalid(location, "must be finite"));
                }
                if k == i && c != 0.0 {
                    return Err(SpecError::invalid(
                        location,
                        format!("diagonal entry must be 0, got {c}"),
                    ));
                }
                if predecessors[i].contains(TaskId(k)) && c != 0.0 {
                    return Err(SpecError::invalid(
                        location,
                        format!(
                            "task {} is a prerequisite of task {}; correction must be 0, got {c}",
                            k + 1,
                            i + 1
                        ),
                    ));
                }
            }
        }
        if let Some(names) = &file.task_names {
            check_len("task_names", names.len(), n)?;
        }
        if let Some(cycle) = find_cycle(&predecessors) {
            return Err(SpecError::Cycle {
                tasks: cycle.into_iter().map(|i| i + 1).collect(),
            });
        }

        Ok(AssemblySpec {
            base_time: file.base_time,
            correction: file.correction,
            predecessors,
            tool,
            num_tools: file.num_tools,
            tool_change_time: file.tool_change_time,
            task_names: file.task_names,
        })
    }

    pub fn num_tasks(&self) -> usize {
        self.base_time.len()
    }

    pub fn num_tools(&self) -> usize {
        self.num_tools
    }

    pub fn tasks(&self) -> impl Iterator<Item = TaskId> {
        (0..self.num_tasks()).map(TaskId)
    }

    pub fn all_tasks(&self) -> TaskSet {
        TaskSet::full(self.num_tasks())
    }

    pub fn base_time(&self, task: TaskId) -> f64 {
        self.base_time[task.0]
    }

    /// Correction applied to `task` once `done_task` is done.
    pub fn correction(&self, done_task: TaskId, task: TaskId) -> f64 {
        self.correction[done_task.0][task.0]
    }

    pub fn predecessors(&self, task: TaskId) -> TaskSet {
        self.predecessors[task.0]
    }

    pub fn tool(&self, task: TaskId) -> ToolId {
        self.tool[task.0]
    }

    pub fn tool_change_time(&self) -> f64 {
        self.tool_change_time
    }

    pub fn task_names(&self) -> Option<&[String]> {
        self.task_names.as_deref()
    }

    pub fn contains(&self, task: TaskId) -> bool {
        task.0 < self.num_tasks()
    }

    /// Tasks not yet done whose predecessors are all done.
    pub fn legal_tasks(&self, done: TaskSet) -> TaskSet {
        self.tasks()
            .filter(|&t| !done.contains(t) && self.predecessors[t.0].is_subset(done))
            .collect()
    }

    pub fn check_legal(&self, task: TaskId, done: TaskSet) -> Result<(), IllegalTask> {
        if !self.contains(task) {
            return Err(IllegalTask::Unknown(task.number()));
        }
        if done.contains(task) {
            return Err(IllegalTask::AlreadyDone(task));
        }
        let missing = self.predecessors[task.0].difference(done);
        if !missing.is_empty() {
            return Err(IllegalTask::Blocked {
                task,
                missing: missing.iter().map(TaskId::number).collect(),
            });
        }
        Ok(())
    }

    /// Whether executing `task` while holding `current_tool` costs a tool change.
    /// Picking up the first tool counts as a change iff `pickup_costs_change`.
    pub fn needs_tool_change(
        &self,
        task: TaskId,
        current_tool: Option<ToolId>,
        pickup_costs_change: bool,
    ) -> bool {
        match current_tool {
            Some(held) => held != self.tool[task.0],
            None => pickup_costs_change,
        }
    }

    /// Deterministic duration of `task` given the done-set and held tool.
    pub fn task_duration(
        &self,
        task: TaskId,
        done: TaskSet,
        current_tool: Option<ToolId>,
        pickup_costs_change: bool,
    ) -> Result<f64, IllegalTask> {
        self.check_legal(task, done)?;
        let corrections: f64 = done.iter().map(|k| self.correction[k.0][task.0]).sum();
        let change = if self.needs_tool_change(task, current_tool, pickup_costs_change) {
            self.tool_change_time
        } else {
            0.0
        };
        Ok(self.base_time[task.0] + corrections + change)
    }

    /// Replays a full or partial sequence through [`task_duration`](Self::task_duration).
    pub fn sequence_timing(
        &self,
        sequence: &[TaskId],
        pickup_costs_change: bool,
    ) -> Result<SequenceTiming, IllegalTask> {
        let mut done = TaskSet::EMPTY;
        let mut tool = None;
        let mut per_task = Vec::with_capacity(sequence.len());
        let mut tool_changes = 0;
        for &task in sequence {
            if self.needs_tool_change(task, tool, pickup_costs_change) {
                tool_changes += 1;
            }
            per_task.push(self.task_duration(task, done, tool, pickup_costs_change)?);
            done.insert(task);
            tool = Some(self.tool(task));
        }
        Ok(SequenceTiming {
            total: per_task.iter().sum(),
            per_task,
            tool_changes,
        })
    }
}

fn check_len(location: &str, got: usize, expected: usize) -> Result<(), SpecError> {
    if got == expected {
        Ok(())
    } else {
        Err(SpecError::invalid(
            location,
            format!("expected {expected} entries, got {got}"),
        ))
    }
}

/// Returns the validated one-based value.
fn check_index(location: &str, value: i64, max: usize) -> Result<usize, SpecError> {
    if value >= 1 && value as u64 <= max as u64 {
        Ok(value as usize)
    } else {
        Err(SpecError::IndexOutOfRange {
            location: location.to_string(),
            value,
            max,
        })
    }
}

/// Finds one cycle in the "is a predecessor of" graph, as zero-based indices
/// in execution order (`a -> b` meaning `a` must precede `b`).
fn find_cycle(predecessors: &[TaskSet]) -> Option<Vec<usize>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Finished,
    }
    let n = predecessors.len();
    let mut mark = vec![Mark::New; n];
    let mut path: Vec<usize> = Vec::new();

    // Walk from each task back through its predecessors.
    fn visit(
        node: usize,
        predecessors: &[TaskSet],
        mark: &mut [Mark],
        path: &mut Vec<usize>,
    ) -> Option<Vec<usize>> {
        mark[node] = Mark::Active;
        path.push(node);
        for p in predecessors[node].iter() {
            let p = p.index();
            match mark[p] {
                Mark::Active => {
                    let start = path.iter().position(|&x| x == p).unwrap();
                    let mut cycle: Vec<usize> = path[start..].to_vec();
                    cycle.reverse();
                    cycle.push(cycle[0]);
                    return Some(cycle);
                }
                Mark::New => {
                    if let Some(c) = visit(p, predecessors, mark, path) {
                        return Some(c);
                    }
                }
                Mark::Finished => {}
            }
        }
        path.pop();
        mark[node] = Mark::Finished;
        None
    }

    for start in 0..n {
        if mark[start] == Mark::New {
            if let Some(c) = visit(start, predecessors, &mut mark, &mut path) {
                return Some(c);
            }
        }
    }
    None
}
