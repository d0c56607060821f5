//! The reflect-then-generate meta-agent.
//!
//! Two backend calls per synthesis: a diagnosis of the parent's failures,
//! then a generation conditioned on it. The output must contain exactly
//! one fenced workflow document; an unparseable completion earns one
//! bounded repair retry before the iteration is counted as invalid. The
//! module is stateless, a pure function of (context, system instruction,
//! backend), and never touches population state.

mod prompt;

pub use prompt::{
    build_prompt, finish_generate_prompt, repair_prompt, PromptPair, DUPLICATE_REFERENCE_MARKER,
    NO_FAILURES_MARKER, TRUNCATION_MARKER,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{complete_with_retry, Backend, LlmRequest, Purpose, RetryPolicy};
use crate::ir::{deserialize, validate_graph, DocumentError, ValidatedWorkflow};
use crate::population::CandidateRecord;

/// The sampled context a synthesis round sees: the parent (with its
/// failure log riding in the record), the best and a diverse archive
/// reference, and the iteration index for the prompt header.
#[derive(Clone, Debug)]
pub struct EvolutionContext {
    pub parent: CandidateRecord,
    pub top: CandidateRecord,
    pub diverse: CandidateRecord,
    pub iteration: u64,
}

/// The meta-agent's standing contract: search-space description, guard
/// language, code-node protocol, output schema, and the reward statement.
/// Versioned alongside the workflow schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemInstruction {
    text: String,
}

impl Default for SystemInstruction {
    fn default() -> Self {
        SystemInstruction {
            text: include_str!("../../assets/system_instruction.md").to_string(),
        }
    }
}

impl SystemInstruction {
    pub fn custom(text: impl Into<String>) -> Self {
        let text = text.into();
        assert!(!text.is_empty(), "system instruction must be non-empty");
        SystemInstruction { text }
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

/// Why a synthesis produced no candidate.
#[derive(Clone, Debug, Error, PartialEq, Serialize, Deserialize)]
pub enum RejectionReason {
    #[error("parse failure: {0}")]
    ParseFailure(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("validation failure: {0}")]
    ValidationFailure(String),
    #[error("backend failure: {0}")]
    BackendFailure(String),
}

/// Everything one synthesis round produced, candidate or not.
#[derive(Debug)]
pub struct SynthesisResult {
    /// The diagnosis text; `None` when reflection is disabled or the
    /// reflect call failed.
    pub reflection: Option<String>,
    /// The validated candidate, or the reason there is none.
    pub candidate: Result<ValidatedWorkflow, RejectionReason>,
    /// Raw (label, text) pairs of every prompt and completion, for audit.
    pub transcript: Vec<(String, String)>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Clone, Debug)]
pub struct SynthesisOptions {
    pub model: String,
    pub temperature: f64,
    pub retry: RetryPolicy,
    /// Byte budget for the parent failure-log excerpt in prompts.
    pub log_budget: usize,
    /// Ablation switch: skip the reflection stage entirely.
    pub disable_reflection: bool,
}

/// Obtain the diagnosis for a reflect prompt.
pub fn reflect(
    prompt: &str,
    backend: &dyn Backend,
    opts: &SynthesisOptions,
) -> Result<(String, u64, u64), RejectionReason> {
    let request = LlmRequest {
        model: opts.model.clone(),
        prompt: prompt.to_string(),
        temperature: opts.temperature,
        purpose: Purpose::MetaReflect,
    };
    let response = complete_with_retry(backend, &request, &opts.retry)
        .map_err(|e| RejectionReason::BackendFailure(e.to_string()))?;
    Ok((
        response.text,
        response.prompt_tokens,
        response.completion_tokens,
    ))
}

/// First fenced code block of a completion, tolerating a language tag.
fn extract_fenced_document(completion: &str) -> Option<String> {
    let open = completion.find("```")?;
    let after_fence = &completion[open + 3..];
    let body_start = after_fence.find('\n')? + 1;
    let body = &after_fence[body_start..];
    let close = body.find("```")?;
    Some(body[..close].trim().to_string())
}

fn parse_candidate(completion: &str) -> Result<ValidatedWorkflow, RejectionReason> {
    let document = extract_fenced_document(completion)
        .ok_or_else(|| RejectionReason::ParseFailure("no fenced document in completion".into()))?;
    let graph = deserialize(&document).map_err(|e| match e {
        DocumentError::Malformed { .. } => RejectionReason::ParseFailure(e.to_string()),
        DocumentError::SchemaViolation { .. } | DocumentError::Version { .. } => {
            RejectionReason::SchemaViolation(e.to_string())
        }
    })?;
    let report = validate_graph(&graph);
    if !report.is_valid() {
        return Err(RejectionReason::ValidationFailure(report.to_string()));
    }
    Ok(graph.into_validated().expect("report was valid"))
}

/// Run the generation stage on a finished generate prompt, with one repair
/// retry when the completion cannot be parsed into a document. Validation
/// failures (the document parsed but the graph is bad) are final.
pub fn generate(
    generate_prompt: &str,
    backend: &dyn Backend,
    opts: &SynthesisOptions,
    transcript: &mut Vec<(String, String)>,
    tokens: &mut (u64, u64),
) -> Result<ValidatedWorkflow, RejectionReason> {
    let mut prompt = generate_prompt.to_string();
    let mut last_reason = None;
    for attempt in 0..2 {
        let request = LlmRequest {
            model: opts.model.clone(),
            prompt: prompt.clone(),
            temperature: opts.temperature,
            purpose: Purpose::MetaGenerate,
        };
        transcript.push((format!("generate_prompt_{attempt}"), prompt.clone()));
        let response = complete_with_retry(backend, &request, &opts.retry)
            .map_err(|e| RejectionReason::BackendFailure(e.to_string()))?;
        tokens.0 += response.prompt_tokens;
        tokens.1 += response.completion_tokens;
        transcript.push((
            format!("generate_completion_{attempt}"),
            response.text.clone(),
        ));

        match parse_candidate(&response.text) {
            Ok(candidate) => return Ok(candidate),
            Err(
                reason @ (RejectionReason::ParseFailure(_) | RejectionReason::SchemaViolation(_)),
            ) => {
                if attempt == 0 {
                    prompt = repair_prompt(generate_prompt, &reason.to_string());
                }
                last_reason = Some(reason);
            }
            Err(reason) => return Err(reason),
        }
    }
    Err(last_reason.expect("two attempts ran"))
}

/// The full reflect-then-generate round.
pub fn synthesize(
    ctx: &EvolutionContext,
    sys: &SystemInstruction,
    backend: &dyn Backend,
    opts: &SynthesisOptions,
) -> SynthesisResult {
    let pair = build_prompt(ctx, sys, opts.log_budget);
    let mut transcript: Vec<(String, String)> = Vec::new();
    let mut tokens = (0u64, 0u64);

    let reflection = if opts.disable_reflection {
        None
    } else {
        transcript.push(("reflect_prompt".into(), pair.reflect.clone()));
        match reflect(&pair.reflect, backend, opts) {
            Ok((text, pt, ct)) => {
                tokens.0 += pt;
                tokens.1 += ct;
                transcript.push(("reflect_completion".into(), text.clone()));
                Some(text)
            }
            Err(reason) => {
                // A dead backend aborts the whole synthesis: the iteration
                // counts as an invalid candidate.
                return SynthesisResult {
                    reflection: None,
                    candidate: Err(reason),
                    transcript,
                    prompt_tokens: tokens.0,
                    completion_tokens: tokens.1,
                };
            }
        }
    };

    let generate_prompt = finish_generate_prompt(&pair.generate_template, reflection.as_deref());
    let candidate = generate(
        &generate_prompt,
        backend,
        opts,
        &mut transcript,
        &mut tokens,
    );

    SynthesisResult {
        reflection,
        candidate,
        transcript,
        prompt_tokens: tokens.0,
        completion_tokens: tokens.1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{RuleResponse, ScriptedBackend};
    use crate::ir::seed_workflow;
    use crate::population::{Lineage, MetricsSummary};

    fn ctx() -> EvolutionContext {
        let record = CandidateRecord::new(
            seed_workflow("m", "{query}", 1.0),
            0.6,
            MetricsSummary {
                mean_score: 0.6,
                mean_cost: 0.0,
                mean_latency: 0.0,
            },
            "[q03 FAILED] node=root kind=backend\n".into(),
            Lineage {
                parent_fingerprint: None,
                iteration: 0,
            },
        );
        EvolutionContext {
            parent: record.clone(),
            top: record.clone(),
            diverse: record,
            iteration: 1,
        }
    }

    fn opts() -> SynthesisOptions {
        SynthesisOptions {
            model: "meta-model".into(),
            temperature: 0.8,
            retry: RetryPolicy::none(),
            log_budget: 4096,
            disable_reflection: false,
        }
    }

    const HYBRID_DOC: &str = r#"{
  "version": 1,
  "nodes": {
    "draft": {"kind": "llm", "model": "m", "instruction": "{query}", "temperature": 0.2},
    "check": {"kind": "code", "source": "import json,sys\nprint(json.load(sys.stdin)['text'])", "inputs": [{"name": "text", "type": "text"}], "output_type": "text"}
  },
  "edges": [{"from": "draft", "to": "check", "label": "text"}],
  "terminal": "check"
}"#;

    const CYCLIC_DOC: &str = r#"{
  "version": 1,
  "nodes": {
    "a": {"kind": "llm", "model": "m", "instruction": "{x}", "temperature": 0.2},
    "b": {"kind": "llm", "model": "m", "instruction": "{y}", "temperature": 0.2}
  },
  "edges": [
    {"from": "a", "to": "b", "label": "y"},
    {"from": "b", "to": "a", "label": "x"}
  ],
  "terminal": "b"
}"#;

    fn meta_backend(generate_response: &str) -> ScriptedBackend {
        ScriptedBackend::default()
            .rule(
                Some(crate::backend::Purpose::MetaReflect),
                None,
                RuleResponse::Text("add a format-check code node".into()),
            )
            .rule(
                Some(crate::backend::Purpose::MetaGenerate),
                None,
                RuleResponse::Text(generate_response.into()),
            )
    }

    #[test]
    fn scripted_reflection_comes_back_verbatim() {
        let backend = meta_backend("irrelevant");
        let pair = build_prompt(&ctx(), &SystemInstruction::default(), 4096);
        let (text, _, _) = reflect(&pair.reflect, &backend, &opts()).unwrap();
        assert_eq!(text, "add a format-check code node");
    }

    #[test]
    fn valid_document_becomes_a_candidate() {
        let backend = meta_backend(&format!(
            "Here you go:\n```json\n{HYBRID_DOC}\n```\nGood luck."
        ));
        let result = synthesize(&ctx(), &SystemInstruction::default(), &backend, &opts());
        let candidate = result.candidate.expect("candidate");
        let d = candidate.descriptor();
        assert_eq!((d.node_count, d.llm_proportion), (2, 0.5));
        assert_eq!(
            result.reflection.as_deref(),
            Some("add a format-check code node")
        );
        assert!(result.prompt_tokens > 0 && result.completion_tokens > 0);
    }

    #[test]
    fn cyclic_document_is_a_validation_failure() {
        let backend = meta_backend(&format!("```json\n{CYCLIC_DOC}\n```"));
        let result = synthesize(&ctx(), &SystemInstruction::default(), &backend, &opts());
        match result.candidate {
            Err(RejectionReason::ValidationFailure(msg)) => assert!(msg.contains("cycle"), "{msg}"),
            other => panic!("expected validation failure, got {other:?}"),
        }
    }

    #[test]
    fn unparseable_completion_fails_after_one_repair_retry() {
        let backend = meta_backend("I refuse to emit a document.");
        let result = synthesize(&ctx(), &SystemInstruction::default(), &backend, &opts());
        assert!(matches!(
            result.candidate,
            Err(RejectionReason::ParseFailure(_))
        ));
        // Two generate prompts in the transcript: original + repair.
        let generates = result
            .transcript
            .iter()
            .filter(|(label, _)| label.starts_with("generate_prompt"))
            .count();
        assert_eq!(generates, 2);
    }

    #[test]
    fn repair_retry_can_succeed() {
        // First generate completion is garbage; the repair prompt (which
        // contains the correction marker) gets the valid document.
        let backend = ScriptedBackend::default()
            .rule(
                Some(crate::backend::Purpose::MetaReflect),
                None,
                RuleResponse::Text("diag".into()),
            )
            .rule(
                Some(crate::backend::Purpose::MetaGenerate),
                Some("# Correction required"),
                RuleResponse::Text(format!("```json\n{HYBRID_DOC}\n```")),
            )
            .rule(
                Some(crate::backend::Purpose::MetaGenerate),
                None,
                RuleResponse::Text("garbage".into()),
            );
        let result = synthesize(&ctx(), &SystemInstruction::default(), &backend, &opts());
        assert!(result.candidate.is_ok());
    }

    #[test]
    fn backend_failure_aborts_the_round() {
        let backend = ScriptedBackend::default(); // no rules: every call misses
        let result = synthesize(&ctx(), &SystemInstruction::default(), &backend, &opts());
        assert!(matches!(
            result.candidate,
            Err(RejectionReason::BackendFailure(_))
        ));
        assert!(result.reflection.is_none());
    }

    #[test]
    fn disabled_reflection_skips_the_first_call() {
        let backend = meta_backend(&format!("```json\n{HYBRID_DOC}\n```"));
        let mut o = opts();
        o.disable_reflection = true;
        let result = synthesize(&ctx(), &SystemInstruction::default(), &backend, &o);
        assert!(result.candidate.is_ok());
        assert!(result.reflection.is_none());
        assert!(result
            .transcript
            .iter()
            .all(|(label, _)| !label.starts_with("reflect")));
    }

    #[test]
    fn round_trip_is_deterministic_under_scripted_backend() {
        let backend = meta_backend(&format!("```json\n{HYBRID_DOC}\n```"));
        let a = synthesize(&ctx(), &SystemInstruction::default(), &backend, &opts());
        let b = synthesize(&ctx(), &SystemInstruction::default(), &backend, &opts());
        assert_eq!(a.transcript, b.transcript);
        assert_eq!(
            a.candidate.unwrap().fingerprint(),
            b.candidate.unwrap().fingerprint()
        );
    }
}
