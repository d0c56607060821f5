//! Execution traces: per-node outputs, structured event logs, and the
//! aggregate cost/latency a run contributes to the reward.

use serde::{Deserialize, Serialize};

use crate::ir::NodeId;

/// A node's output: text, or the designated ABSENT marker produced by
/// false guards, skipped nodes, and node failures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NodeValue {
    Absent,
    Text(String),
}

impl NodeValue {
    pub fn is_absent(&self) -> bool {
        matches!(self, NodeValue::Absent)
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            NodeValue::Text(t) => Some(t),
            NodeValue::Absent => None,
        }
    }
}

/// Why a node produced no output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Timeout,
    MemoryExceeded,
    NonzeroExit,
    MalformedOutput,
    Backend,
    UnboundPlaceholder,
    CostAccounting,
}

/// A node-level failure: recorded in the trace, never fatal to the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeFailure {
    pub kind: FailureKind,
    pub message: String,
    /// Captured stderr excerpt for sandbox failures; empty otherwise.
    pub stderr: String,
}

impl NodeFailure {
    pub fn new(kind: FailureKind, message: impl Into<String>) -> Self {
        NodeFailure {
            kind,
            message: message.into(),
            stderr: String::new(),
        }
    }

    pub fn with_stderr(mut self, stderr: impl Into<String>) -> Self {
        self.stderr = stderr.into();
        self
    }
}

/// One structured log entry. Events carry no wall-clock timestamps; their
/// order is the execution order, which keeps scripted runs byte-identical.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    NodeStarted {
        node: NodeId,
    },
    GuardDecision {
        from: NodeId,
        to: NodeId,
        label: String,
        passed: bool,
    },
    GuardError {
        from: NodeId,
        to: NodeId,
        label: String,
        message: String,
    },
    NodeCompleted {
        node: NodeId,
        prompt_tokens: u64,
        completion_tokens: u64,
        wall_time: f64,
    },
    /// All guarded alternatives for `binding` were false.
    NodeSkipped {
        node: NodeId,
        binding: String,
    },
    NodeFailed {
        node: NodeId,
        kind: FailureKind,
        message: String,
        stderr: String,
    },
    RunFinished {
        failed: bool,
    },
}

impl LogEvent {
    pub fn is_failure(&self) -> bool {
        matches!(
            self,
            LogEvent::NodeFailed { .. } | LogEvent::GuardError { .. }
        )
    }
}

/// Output record for one executed node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeOutput {
    pub node: NodeId,
    pub value: NodeValue,
    /// (prompt, completion); zero for code nodes.
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Seconds; diagnostics only (see `ExecutionTrace::total_latency`).
    pub wall_time: f64,
}

/// The complete record of one workflow run on one query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    /// Per-node outputs in execution order, including skipped/failed nodes.
    pub outputs: Vec<NodeOutput>,
    /// The terminal node's value.
    pub answer: NodeValue,
    /// USD, summed over LLM-node responses; code nodes contribute zero.
    pub total_cost: f64,
    /// Seconds: wall-clock of the whole run, or the accounted sum of node
    /// times under deterministic accounting.
    pub total_latency: f64,
    pub log: Vec<LogEvent>,
    /// True when the terminal output is ABSENT.
    pub failed: bool,
}

impl ExecutionTrace {
    pub fn failure_events(&self) -> impl Iterator<Item = &LogEvent> {
        self.log.iter().filter(|e| e.is_failure())
    }
}
