use std::path::PathBuf;

use thiserror::Error;

use crate::assembly::TaskId;

/// Problems found while reading or validating an assembly spec.
#[derive(Debug, Error)]
pub enum SpecError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{location}: index {value} out of range 1..={max}")]
    IndexOutOfRange {
        location: String,
        value: i64,
        max: usize,
    },
    #[error("{location}: base time must be positive and finite, got {value}")]
    NonPositiveBaseTime { location: String, value: f64 },
    #[error("{location}: {message}")]
    Invalid { location: String, message: String },
    #[error("precedence cycle through tasks {}", format_cycle(.tasks))]
    Cycle { tasks: Vec<usize> },
}

fn format_cycle(tasks: &[usize]) -> String {
    tasks
        .iter()
        .map(|t| t.to_string())
        .collect::<Vec<_>>()
        .join(" -> ")
}

impl SpecError {
    pub(crate) fn invalid(location: impl Into<String>, message: impl Into<String>) -> Self {
        SpecError::Invalid {
            location: location.into(),
            message: message.into(),
        }
    }
}

/// A task cannot be executed from the given done-set.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IllegalTask {
    #[error("task {0} is already done")]
    AlreadyDone(TaskId),
    #[error("task {task} is blocked: predecessors {missing:?} not done")]
    Blocked { task: TaskId, missing: Vec<usize> },
    #[error("task index {0} is outside the assembly")]
    Unknown(usize),
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("illegal action with masking on: {0}")]
    IllegalAction(#[from] IllegalTask),
    #[error("episode already finished; call reset")]
    EpisodeOver,
    #[error("invalid environment config: {0}")]
    Config(String),
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("enumeration exceeds the ceiling of {ceiling} sequences")]
    CeilingExceeded { ceiling: u64 },
    #[error("no sequence records")]
    Empty,
}

#[derive(Debug, Error)]
pub enum NnError {
    #[error("network needs at least two layer sizes, got {0:?}")]
    BadSizes(Vec<usize>),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },
    #[error("snapshot: {0}")]
    Snapshot(String),
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("no legal action in mask")]
    EmptyMask,
    #[error("empty rollout")]
    EmptyRollout,
    #[error("replay buffer is empty")]
    EmptyBuffer,
    #[error("priority index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid agent config: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("no trial results to aggregate")]
    NoTrials,
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

impl HarnessError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }
}
