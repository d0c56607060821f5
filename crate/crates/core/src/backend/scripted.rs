//! Scripted backend: a pure decision table for tests and fixtures.
//!
//! Rules are tried in order; the first whose purpose and prompt pattern
//! both match decides the response. Identical requests always yield
//! identical responses, across runs and processes. There is no hidden
//! state, which is what makes whole evolution runs replayable.

use serde::{Deserialize, Serialize};

use super::{word_count, Backend, BackendError, LlmRequest, LlmResponse, Purpose};

/// What a matched rule answers with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleResponse {
    /// Respond with the request prompt verbatim.
    Echo,
    /// Respond with fixed text.
    Text(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptedRule {
    /// Match only requests with this purpose; `None` matches any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub purpose: Option<Purpose>,
    /// Substring the prompt must contain; `None` matches any prompt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_contains: Option<String>,
    pub response: RuleResponse,
    /// Reported wall time in seconds (deterministic; defaults to zero).
    #[serde(default)]
    pub wall_time: f64,
}

impl ScriptedRule {
    fn matches(&self, request: &LlmRequest) -> bool {
        if let Some(p) = self.purpose {
            if p != request.purpose {
                return false;
            }
        }
        if let Some(needle) = &self.prompt_contains {
            if !request.prompt.contains(needle) {
                return false;
            }
        }
        true
    }
}

/// Token accounting is the whitespace word count of prompt and response,
/// a documented test-only approximation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptedBackend {
    pub rules: Vec<ScriptedRule>,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptedRule>) -> Self {
        ScriptedBackend { rules }
    }

    /// A backend with a single catch-all echo rule.
    pub fn echo() -> Self {
        ScriptedBackend::new(vec![ScriptedRule {
            purpose: None,
            prompt_contains: None,
            response: RuleResponse::Echo,
            wall_time: 0.0,
        }])
    }

    pub fn rule(
        mut self,
        purpose: Option<Purpose>,
        prompt_contains: Option<&str>,
        response: RuleResponse,
    ) -> Self {
        self.rules.push(ScriptedRule {
            purpose,
            prompt_contains: prompt_contains.map(str::to_string),
            response,
            wall_time: 0.0,
        });
        self
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, BackendError> {
        request.validate()?;
        let rule = self
            .rules
            .iter()
            .find(|r| r.matches(request))
            .ok_or_else(|| BackendError::ScriptMiss {
                purpose: request.purpose,
                prompt_head: request.prompt.chars().take(80).collect(),
            })?;
        let text = match &rule.response {
            RuleResponse::Echo => request.prompt.clone(),
            RuleResponse::Text(t) => t.clone(),
        };
        Ok(LlmResponse {
            prompt_tokens: word_count(&request.prompt),
            completion_tokens: word_count(&text),
            text,
            wall_time: rule.wall_time,
        })
    }
}
