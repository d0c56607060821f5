//! The LLM invocation boundary.
//!
//! Three interchangeable implementations sit behind one trait: a live
//! chat-completions HTTP client, a replay store of recorded fixtures, and a
//! scripted rule table for tests. Everything above this boundary (task
//! nodes, the meta-agent) is backend-agnostic, which is what lets the whole
//! acceptance suite run with zero paid calls.

mod cost;
mod live;
mod replay;
mod scripted;

pub use cost::{cost_of, CostTable, ModelPrice, UnknownModelError};
pub use live::{LiveBackend, LiveConfig};
pub use replay::ReplayBackend;
pub use scripted::{RuleResponse, ScriptedBackend, ScriptedRule};

use std::thread::sleep;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Who is asking: a task-level workflow node or one of the two meta-agent
/// stages. Scripted rules key on this.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    TaskNode,
    MetaReflect,
    MetaGenerate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
    pub purpose: Purpose,
}

impl LlmRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.prompt.is_empty() {
            return Err(BackendError::InvalidRequest("empty prompt".into()));
        }
        if !(0.0..=1.0).contains(&self.temperature) || self.temperature.is_nan() {
            return Err(BackendError::InvalidRequest(format!(
                "temperature {} outside [0, 1]",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Seconds. Live backends measure the call; scripted and replay
    /// backends report their recorded value so runs stay deterministic.
    pub wall_time: f64,
}

#[derive(Debug, Error)]
pub enum BackendError {
    /// Network-level failure; retryable.
    #[error("transport failure: {0}")]
    Transport(String),
    /// Provider signalled throttling; retryable.
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("unknown model '{0}'")]
    UnknownModel(String),
    /// The replay store has no fixture for this request digest.
    #[error("replay miss for request digest {0}")]
    ReplayMiss(String),
    /// No scripted rule matched the request.
    #[error("no scripted rule matched (purpose {purpose:?}, prompt head {prompt_head:?})")]
    ScriptMiss {
        purpose: Purpose,
        prompt_head: String,
    },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    /// Non-throttling API error (bad key, malformed body, ...).
    #[error("api error (status {status}): {message}")]
    Api { status: u16, message: String },
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            BackendError::Transport(_) | BackendError::RateLimited(_)
        )
    }
}

/// One completion provider. Implementations must be callable from many
/// evaluator workers at once.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, BackendError>;
}

/// Bounded-retry policy with exponential backoff for retryable errors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Total attempts, including the first (so 1 = no retries).
    pub max_attempts: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay_ms: 200,
        }
    }
}

impl RetryPolicy {
    /// No retries and no sleeping; what deterministic tests want.
    pub fn none() -> Self {
        RetryPolicy {
            max_attempts: 1,
            base_delay_ms: 0,
        }
    }
}

/// Call `backend.complete`, retrying retryable failures up to the policy
/// cap with exponential backoff. Non-retryable errors return immediately.
pub fn complete_with_retry(
    backend: &dyn Backend,
    request: &LlmRequest,
    policy: &RetryPolicy,
) -> Result<LlmResponse, BackendError> {
    request.validate()?;
    let attempts = policy.max_attempts.max(1);
    let mut last_err = None;
    for attempt in 0..attempts {
        match backend.complete(request) {
            Ok(response) => return Ok(response),
            Err(e) if e.is_retryable() && attempt + 1 < attempts => {
                if policy.base_delay_ms > 0 {
                    sleep(Duration::from_millis(policy.base_delay_ms << attempt));
                }
                last_err = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("loop ran at least once"))
}

/// Test-only token accounting shared by scripted responses: whitespace word
/// count of the text.
pub(crate) fn word_count(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}
