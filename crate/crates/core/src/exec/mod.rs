//! Workflow execution: topological message passing over a validated graph.
//!
//! Each node receives the outputs of its predecessors under the incoming
//! edge labels plus the reserved `query` binding. Guards are evaluated on
//! the already-computed source output before a binding is delivered; a node
//! whose guarded alternatives for some binding are all false is skipped and
//! propagates ABSENT downstream. Node-level failures are recorded in the
//! trace and never abort the run; only an unusable sandbox does.

mod sandbox;
mod trace;

pub use sandbox::{Sandbox, SandboxLimits, SandboxOutcome, SandboxRun, SandboxUnavailable};
pub use trace::{ExecutionTrace, FailureKind, LogEvent, NodeFailure, NodeOutput, NodeValue};

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{
    complete_with_retry, cost_of, Backend, CostTable, LlmRequest, Purpose, RetryPolicy,
};
use crate::guard::GuardExpr;
use crate::ir::{CodeNodeSpec, LlmNodeSpec, NodeSpec, ValidatedWorkflow, QUERY_BINDING};

/// How a trace's total latency is computed.
///
/// `Measured` is real wall-clock (what a live run reports). `Accounted`
/// sums backend-reported node durations and counts code nodes as zero,
/// which makes scripted and replayed runs byte-for-byte reproducible.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencyMode {
    Measured,
    #[default]
    Accounted,
}

/// Everything a workflow run needs besides the graph and the query.
pub struct ExecutionEnv<'a> {
    pub backend: &'a dyn Backend,
    pub sandbox: &'a Sandbox,
    pub cost_table: &'a CostTable,
    pub retry: RetryPolicy,
    pub latency_mode: LatencyMode,
}

#[derive(Debug, Error)]
pub enum ExecError {
    #[error(transparent)]
    SandboxUnavailable(#[from] SandboxUnavailable),
}

/// Run a validated workflow on one query.
pub fn execute_workflow(
    graph: &ValidatedWorkflow,
    query: &str,
    env: &ExecutionEnv<'_>,
) -> Result<ExecutionTrace, ExecError> {
    let started = Instant::now();
    let order = graph.topo_order();

    let mut values: BTreeMap<&crate::ir::NodeId, NodeValue> = BTreeMap::new();
    let mut outputs = Vec::with_capacity(order.len());
    let mut log = Vec::new();
    let mut total_cost = 0.0;

    for node_id in &order {
        log.push(LogEvent::NodeStarted {
            node: node_id.clone(),
        });
        let spec = &graph.nodes[node_id];

        let bindings = match resolve_bindings(graph, node_id, query, &values, &mut log) {
            Some(b) => b,
            None => {
                // Skipped: some binding had all alternatives guarded false.
                values.insert(node_id, NodeValue::Absent);
                outputs.push(absent_output(node_id));
                continue;
            }
        };

        let result = match spec {
            NodeSpec::Llm(llm) => run_llm_node(llm, &bindings, env),
            NodeSpec::Code(code) => match run_code_node(code, &bindings, env.sandbox) {
                Ok(run) => {
                    let wall_time = match env.latency_mode {
                        LatencyMode::Measured => run.duration,
                        LatencyMode::Accounted => 0.0,
                    };
                    Ok(NodeRun {
                        text: run.text,
                        prompt_tokens: 0,
                        completion_tokens: 0,
                        wall_time,
                        cost: 0.0,
                    })
                }
                Err(CodeNodeError::Unavailable(e)) => return Err(e.into()),
                Err(CodeNodeError::Failure(f)) => Err(f),
            },
        };

        match result {
            Ok(run) => {
                log.push(LogEvent::NodeCompleted {
                    node: node_id.clone(),
                    prompt_tokens: run.prompt_tokens,
                    completion_tokens: run.completion_tokens,
                    wall_time: run.wall_time,
                });
                total_cost += run.cost;
                outputs.push(NodeOutput {
                    node: node_id.clone(),
                    value: NodeValue::Text(run.text.clone()),
                    prompt_tokens: run.prompt_tokens,
                    completion_tokens: run.completion_tokens,
                    wall_time: run.wall_time,
                });
                values.insert(node_id, NodeValue::Text(run.text));
            }
            Err(failure) => {
                log.push(LogEvent::NodeFailed {
                    node: node_id.clone(),
                    kind: failure.kind,
                    message: failure.message,
                    stderr: failure.stderr,
                });
                values.insert(node_id, NodeValue::Absent);
                outputs.push(absent_output(node_id));
            }
        }
    }

    let answer = values
        .get(&graph.terminal)
        .cloned()
        .unwrap_or(NodeValue::Absent);
    let failed = answer.is_absent();
    log.push(LogEvent::RunFinished { failed });

    let total_latency = match env.latency_mode {
        LatencyMode::Measured => started.elapsed().as_secs_f64(),
        LatencyMode::Accounted => outputs.iter().map(|o| o.wall_time).sum(),
    };

    Ok(ExecutionTrace {
        outputs,
        answer,
        total_cost,
        total_latency,
        log,
        failed,
    })
}

fn absent_output(node: &crate::ir::NodeId) -> NodeOutput {
    NodeOutput {
        node: node.clone(),
        value: NodeValue::Absent,
        prompt_tokens: 0,
        completion_tokens: 0,
        wall_time: 0.0,
    }
}

/// Collect the bindings delivered to `node`. Returns `None` when the node
/// must be skipped (all guarded alternatives false for some label).
fn resolve_bindings(
    graph: &ValidatedWorkflow,
    node: &crate::ir::NodeId,
    query: &str,
    values: &BTreeMap<&crate::ir::NodeId, NodeValue>,
    log: &mut Vec<LogEvent>,
) -> Option<BTreeMap<String, NodeValue>> {
    let mut bindings = BTreeMap::new();
    bindings.insert(
        QUERY_BINDING.to_string(),
        NodeValue::Text(query.to_string()),
    );

    // Edges are canonically sorted, so alternatives resolve in a fixed
    // order: first passing edge wins.
    let mut skip: Option<String> = None;
    let mut labels_seen: Vec<&str> = Vec::new();
    for edge in graph.incoming(node) {
        if !labels_seen.contains(&edge.label.as_str()) {
            labels_seen.push(&edge.label);
        }
    }
    for label in labels_seen {
        let mut delivered: Option<NodeValue> = None;
        for edge in graph.incoming(node).filter(|e| e.label == label) {
            let source_value = values.get(&edge.from).cloned().unwrap_or(NodeValue::Absent);
            let passed = match &edge.guard {
                None => true,
                Some(text) => match evaluate_guard(text, &source_value) {
                    Ok(passed) => {
                        log.push(LogEvent::GuardDecision {
                            from: edge.from.clone(),
                            to: edge.to.clone(),
                            label: edge.label.clone(),
                            passed,
                        });
                        passed
                    }
                    Err(e) => {
                        log.push(LogEvent::GuardError {
                            from: edge.from.clone(),
                            to: edge.to.clone(),
                            label: edge.label.clone(),
                            message: e.to_string(),
                        });
                        false
                    }
                },
            };
            if passed && delivered.is_none() {
                delivered = Some(source_value);
            }
        }
        match delivered {
            Some(value) => {
                bindings.insert(label.to_string(), value);
            }
            None => {
                skip = Some(label.to_string());
                break;
            }
        }
    }

    if let Some(binding) = skip {
        log.push(LogEvent::NodeSkipped {
            node: node.clone(),
            binding,
        });
        return None;
    }
    Some(bindings)
}

struct NodeRun {
    text: String,
    prompt_tokens: u64,
    completion_tokens: u64,
    wall_time: f64,
    cost: f64,
}

/// Render the instruction template and call the backend. ABSENT bindings
/// substitute the literal token `ABSENT` (the meta-agent contract).
fn run_llm_node(
    spec: &LlmNodeSpec,
    bindings: &BTreeMap<String, NodeValue>,
    env: &ExecutionEnv<'_>,
) -> Result<NodeRun, NodeFailure> {
    let prompt = render_instruction(&spec.instruction, bindings)?;
    let request = LlmRequest {
        model: spec.model.clone(),
        prompt,
        temperature: spec.temperature,
        purpose: Purpose::TaskNode,
    };
    let response = complete_with_retry(env.backend, &request, &env.retry)
        .map_err(|e| NodeFailure::new(FailureKind::Backend, e.to_string()))?;
    let cost = cost_of(&response, &spec.model, env.cost_table)
        .map_err(|e| NodeFailure::new(FailureKind::CostAccounting, e.to_string()))?;
    Ok(NodeRun {
        text: response.text,
        prompt_tokens: response.prompt_tokens,
        completion_tokens: response.completion_tokens,
        wall_time: response.wall_time,
        cost,
    })
}

/// Substitute `{name}` placeholders from the binding map.
pub fn render_instruction(
    template: &str,
    bindings: &BTreeMap<String, NodeValue>,
) -> Result<String, NodeFailure> {
    let mut out = template.to_string();
    for name in crate::ir::extract_placeholders(template) {
        let value = bindings.get(&name).ok_or_else(|| {
            NodeFailure::new(
                FailureKind::UnboundPlaceholder,
                format!("placeholder '{{{name}}}' has no bound value"),
            )
        })?;
        let text = match value {
            NodeValue::Text(t) => t.as_str(),
            NodeValue::Absent => "ABSENT",
        };
        out = out.replace(&format!("{{{name}}}"), text);
    }
    Ok(out)
}

/// Output of a successful code-node execution.
#[derive(Debug)]
pub struct CodeRun {
    pub text: String,
    /// Measured subprocess wall time in seconds.
    pub duration: f64,
}

#[derive(Debug)]
pub enum CodeNodeError {
    Failure(NodeFailure),
    Unavailable(SandboxUnavailable),
}

/// Execute a code node: its declared signature inputs are delivered as one
/// JSON object on stdin (ABSENT as `null`); its stdout, stripped of one
/// trailing newline, is the node output. Exit status 0 required.
pub fn run_code_node(
    spec: &CodeNodeSpec,
    bindings: &BTreeMap<String, NodeValue>,
    sandbox: &Sandbox,
) -> Result<CodeRun, CodeNodeError> {
    let mut payload = serde_json::Map::new();
    for input in &spec.inputs {
        let value = match bindings.get(&input.name) {
            Some(NodeValue::Text(t)) => serde_json::Value::String(t.clone()),
            Some(NodeValue::Absent) | None => serde_json::Value::Null,
        };
        payload.insert(input.name.clone(), value);
    }
    let stdin = serde_json::Value::Object(payload).to_string();

    let run = sandbox
        .execute(&spec.source, stdin.as_bytes())
        .map_err(CodeNodeError::Unavailable)?;

    match run.outcome {
        SandboxOutcome::TimedOut { stderr } => Err(CodeNodeError::Failure(
            NodeFailure::new(FailureKind::Timeout, "wall-time cap exceeded").with_stderr(stderr),
        )),
        SandboxOutcome::OutputOverflow { stderr } => Err(CodeNodeError::Failure(
            NodeFailure::new(FailureKind::MalformedOutput, "output cap exceeded")
                .with_stderr(stderr),
        )),
        SandboxOutcome::Exited {
            status,
            stdout,
            stderr,
        } => {
            if status != 0 {
                let kind = if stderr.contains("MemoryError") {
                    FailureKind::MemoryExceeded
                } else {
                    FailureKind::NonzeroExit
                };
                return Err(CodeNodeError::Failure(
                    NodeFailure::new(kind, format!("exit status {status}")).with_stderr(stderr),
                ));
            }
            let mut text = String::from_utf8(stdout).map_err(|_| {
                CodeNodeError::Failure(
                    NodeFailure::new(FailureKind::MalformedOutput, "output is not valid UTF-8")
                        .with_stderr(stderr),
                )
            })?;
            if text.ends_with('\n') {
                text.pop();
                if text.ends_with('\r') {
                    text.pop();
                }
            }
            Ok(CodeRun {
                text,
                duration: run.duration,
            })
        }
    }
}

/// Evaluate a guard expression text against a source output.
pub fn evaluate_guard(
    guard: &str,
    value: &NodeValue,
) -> Result<bool, crate::guard::GuardParseError> {
    Ok(GuardExpr::parse(guard)?.evaluate(value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{RuleResponse, ScriptedBackend};
    use crate::ir::{seed_workflow, GuardedEdge, NodeId, SignatureInput, WorkflowGraph};

    fn env<'a>(
        backend: &'a ScriptedBackend,
        sandbox: &'a Sandbox,
        cost: &'a CostTable,
    ) -> ExecutionEnv<'a> {
        ExecutionEnv {
            backend,
            sandbox,
            cost_table: cost,
            retry: RetryPolicy::none(),
            latency_mode: LatencyMode::Accounted,
        }
    }

    fn free_cost() -> CostTable {
        CostTable::new().with_model("test-model", 0.0, 0.0)
    }

    fn llm(instruction: &str) -> NodeSpec {
        NodeSpec::Llm(LlmNodeSpec {
            model: "test-model".into(),
            instruction: instruction.into(),
            temperature: 0.0,
        })
    }

    fn code(source: &str, inputs: &[&str]) -> NodeSpec {
        NodeSpec::Code(CodeNodeSpec::new(
            source,
            inputs
                .iter()
                .map(|n| SignatureInput {
                    name: n.to_string(),
                    type_name: "text".into(),
                })
                .collect(),
            "text",
        ))
    }

    const UPPER: &str = "import json, sys\nb = json.load(sys.stdin)\nprint(b['x'].upper())";

    #[test]
    fn single_node_echo_passthrough() {
        let backend = ScriptedBackend::echo();
        let sandbox = Sandbox::default();
        let cost = free_cost();
        let seed = seed_workflow("test-model", "{query}", 0.0);
        let trace = execute_workflow(&seed, "hi", &env(&backend, &sandbox, &cost)).unwrap();
        assert_eq!(trace.answer, NodeValue::Text("hi".into()));
        assert!(!trace.failed);
        assert_eq!(trace.outputs[0].prompt_tokens, 1);
        assert_eq!(trace.total_cost, 0.0);
    }

    #[test]
    fn llm_then_code_uppercases() {
        let backend = ScriptedBackend::echo();
        let sandbox = Sandbox::default();
        let cost = free_cost();
        let mut nodes = std::collections::BTreeMap::new();
        nodes.insert(NodeId::new("draft"), llm("{query}"));
        nodes.insert(NodeId::new("shout"), code(UPPER, &["x"]));
        let graph = WorkflowGraph::new(
            nodes,
            vec![GuardedEdge::new("draft", "shout", "x")],
            NodeId::new("shout"),
        )
        .into_validated()
        .unwrap();

        let trace = execute_workflow(&graph, "abc", &env(&backend, &sandbox, &cost)).unwrap();
        assert_eq!(trace.answer, NodeValue::Text("ABC".into()));
        // Code nodes contribute no tokens and no cost.
        let code_out = trace
            .outputs
            .iter()
            .find(|o| o.node.as_str() == "shout")
            .unwrap();
        assert_eq!((code_out.prompt_tokens, code_out.completion_tokens), (0, 0));
        assert_eq!(trace.total_cost, 0.0);
    }

    #[test]
    fn always_false_guard_fails_the_run() {
        let backend = ScriptedBackend::echo();
        let sandbox = Sandbox::default();
        let cost = free_cost();
        let mut nodes = std::collections::BTreeMap::new();
        nodes.insert(NodeId::new("a"), llm("{query}"));
        nodes.insert(NodeId::new("b"), llm("{x}"));
        let graph = WorkflowGraph::new(
            nodes,
            vec![GuardedEdge::new("a", "b", "x").with_guard(r#"equals("__never__")"#)],
            NodeId::new("b"),
        )
        .into_validated()
        .unwrap();

        let trace = execute_workflow(&graph, "hi", &env(&backend, &sandbox, &cost)).unwrap();
        assert!(trace.failed);
        assert_eq!(trace.answer, NodeValue::Absent);
        assert!(trace
            .log
            .iter()
            .any(|e| matches!(e, LogEvent::NodeSkipped { node, .. } if node.as_str() == "b")));
        assert!(trace
            .log
            .iter()
            .any(|e| matches!(e, LogEvent::GuardDecision { passed: false, .. })));
    }

    #[test]
    fn code_node_adds_two_numbers() {
        let sandbox = Sandbox::default();
        let spec = match code(
            "import json, sys\nb = json.load(sys.stdin)\nprint(int(b['x']) + int(b['y']))",
            &["x", "y"],
        ) {
            NodeSpec::Code(c) => c,
            _ => unreachable!(),
        };
        let mut bindings = BTreeMap::new();
        bindings.insert("x".to_string(), NodeValue::Text("2".into()));
        bindings.insert("y".to_string(), NodeValue::Text("3".into()));
        let run = run_code_node(&spec, &bindings, &sandbox).unwrap();
        assert_eq!(run.text, "5");
    }

    #[test]
    fn code_node_timeout_within_margin() {
        let sandbox = Sandbox {
            limits: SandboxLimits {
                wall_time_cap: 0.5,
                ..SandboxLimits::default()
            },
            ..Sandbox::default()
        };
        let spec = match code("while True:\n    pass", &[]) {
            NodeSpec::Code(c) => c,
            _ => unreachable!(),
        };
        let started = std::time::Instant::now();
        match run_code_node(&spec, &BTreeMap::new(), &sandbox) {
            Err(CodeNodeError::Failure(f)) => assert_eq!(f.kind, FailureKind::Timeout),
            other => panic!("expected timeout, got {other:?}"),
        }
        assert!(started.elapsed().as_secs_f64() < 3.0);
    }

    #[test]
    fn code_node_is_reproducible() {
        let sandbox = Sandbox::default();
        let spec = match code(
            "import json, sys\nb = json.load(sys.stdin)\nwords = sorted(set(b['x'].split()))\nprint(','.join(words))",
            &["x"],
        ) {
            NodeSpec::Code(c) => c,
            _ => unreachable!(),
        };
        let mut bindings = BTreeMap::new();
        bindings.insert(
            "x".to_string(),
            NodeValue::Text("pear apple pear fig apple".into()),
        );
        let first = run_code_node(&spec, &bindings, &sandbox).unwrap().text;
        for _ in 0..9 {
            assert_eq!(
                run_code_node(&spec, &bindings, &sandbox).unwrap().text,
                first
            );
        }
        assert_eq!(first, "apple,fig,pear");
    }

    #[test]
    fn template_rendering_and_unbound_placeholder() {
        let mut bindings = BTreeMap::new();
        bindings.insert("query".to_string(), NodeValue::Text("1+1".into()));
        assert_eq!(
            render_instruction("Solve: {query}", &bindings).unwrap(),
            "Solve: 1+1"
        );

        let err = render_instruction("Use {hint}", &bindings).unwrap_err();
        assert_eq!(err.kind, FailureKind::UnboundPlaceholder);

        bindings.insert("hint".to_string(), NodeValue::Absent);
        assert_eq!(
            render_instruction("Use {hint}", &bindings).unwrap(),
            "Use ABSENT"
        );
    }

    #[test]
    fn scripted_solver_rule() {
        let backend =
            ScriptedBackend::default().rule(None, Some("Solve"), RuleResponse::Text("2".into()));
        let sandbox = Sandbox::default();
        let cost = free_cost();
        let seed = seed_workflow("test-model", "Solve: {query}", 0.0);
        let trace = execute_workflow(&seed, "1+1", &env(&backend, &sandbox, &cost)).unwrap();
        assert_eq!(trace.answer, NodeValue::Text("2".into()));
    }

    #[test]
    fn node_failure_propagates_absent_but_run_completes() {
        // The failing code node feeds the terminal; terminal sees ABSENT.
        let backend = ScriptedBackend::echo();
        let sandbox = Sandbox::default();
        let cost = free_cost();
        let mut nodes = std::collections::BTreeMap::new();
        nodes.insert(NodeId::new("a"), llm("{query}"));
        nodes.insert(
            NodeId::new("boom"),
            code("raise RuntimeError('kaput')", &["x"]),
        );
        nodes.insert(NodeId::new("z"), llm("got: {y}"));
        let graph = WorkflowGraph::new(
            nodes,
            vec![
                GuardedEdge::new("a", "boom", "x"),
                GuardedEdge::new("boom", "z", "y"),
            ],
            NodeId::new("z"),
        )
        .into_validated()
        .unwrap();

        let trace = execute_workflow(&graph, "q", &env(&backend, &sandbox, &cost)).unwrap();
        assert!(!trace.failed, "terminal LLM still runs with ABSENT binding");
        assert_eq!(trace.answer, NodeValue::Text("got: ABSENT".into()));
        assert!(trace
            .log
            .iter()
            .any(|e| matches!(e, LogEvent::NodeFailed { kind: FailureKind::NonzeroExit, stderr, .. } if stderr.contains("kaput"))));
    }

    #[test]
    fn output_overflow_fails_the_node_but_the_run_completes() {
        let backend = ScriptedBackend::echo();
        let sandbox = Sandbox {
            limits: SandboxLimits {
                output_cap: 512,
                ..SandboxLimits::default()
            },
            ..Sandbox::default()
        };
        let cost = free_cost();
        let mut nodes = std::collections::BTreeMap::new();
        nodes.insert(NodeId::new("flood"), code("print('x' * 100000)", &[]));
        nodes.insert(NodeId::new("after"), llm("saw {v}"));
        let graph = WorkflowGraph::new(
            nodes,
            vec![GuardedEdge::new("flood", "after", "v")],
            NodeId::new("after"),
        )
        .into_validated()
        .unwrap();

        let trace = execute_workflow(&graph, "q", &env(&backend, &sandbox, &cost)).unwrap();
        assert!(!trace.failed, "downstream node still ran");
        assert_eq!(trace.answer, NodeValue::Text("saw ABSENT".into()));
        assert!(trace.log.iter().any(|e| matches!(
            e,
            LogEvent::NodeFailed {
                kind: FailureKind::MalformedOutput,
                ..
            }
        )));
    }

    #[test]
    fn total_cost_is_the_sum_of_llm_node_costs() {
        // Echo backend: token counts are word counts, so costs are exactly
        // predictable. Prompt "one two three" = 3 tokens each way.
        let backend = ScriptedBackend::echo();
        let sandbox = Sandbox::default();
        let cost = CostTable::new().with_model("test-model", 2.0, 4.0);
        let mut nodes = std::collections::BTreeMap::new();
        nodes.insert(NodeId::new("a"), llm("{query}"));
        nodes.insert(NodeId::new("b"), llm("echo back {x}"));
        let graph = WorkflowGraph::new(
            nodes,
            vec![GuardedEdge::new("a", "b", "x")],
            NodeId::new("b"),
        )
        .into_validated()
        .unwrap();

        let trace =
            execute_workflow(&graph, "one two three", &env(&backend, &sandbox, &cost)).unwrap();
        // Node a: 3 prompt + 3 completion; node b: 5 prompt + 5 completion.
        let expected = (3.0 / 1000.0) * 2.0
            + (3.0 / 1000.0) * 4.0
            + (5.0 / 1000.0) * 2.0
            + (5.0 / 1000.0) * 4.0;
        assert!(
            (trace.total_cost - expected).abs() < 1e-15,
            "cost {}",
            trace.total_cost
        );

        let from_outputs: f64 = trace
            .outputs
            .iter()
            .map(|o| {
                (o.prompt_tokens as f64 / 1000.0) * 2.0
                    + (o.completion_tokens as f64 / 1000.0) * 4.0
            })
            .sum();
        assert!((trace.total_cost - from_outputs).abs() < 1e-15);
    }

    #[test]
    fn unknown_model_price_fails_the_node_not_the_run() {
        let backend = ScriptedBackend::echo();
        let sandbox = Sandbox::default();
        let cost = CostTable::new(); // no prices at all
        let seed = seed_workflow("test-model", "{query}", 0.0);
        let trace = execute_workflow(&seed, "hi", &env(&backend, &sandbox, &cost)).unwrap();
        assert!(trace.failed);
        assert!(trace.log.iter().any(|e| matches!(
            e,
            LogEvent::NodeFailed {
                kind: FailureKind::CostAccounting,
                ..
            }
        )));
    }

    #[test]
    fn measured_latency_covers_every_node() {
        let backend = ScriptedBackend::echo();
        let sandbox = Sandbox::default();
        let cost = free_cost();
        let mut nodes = std::collections::BTreeMap::new();
        nodes.insert(NodeId::new("a"), llm("{query}"));
        nodes.insert(
            NodeId::new("b"),
            code("import json,sys\nprint(json.load(sys.stdin)['x'])", &["x"]),
        );
        let graph = WorkflowGraph::new(
            nodes,
            vec![GuardedEdge::new("a", "b", "x")],
            NodeId::new("b"),
        )
        .into_validated()
        .unwrap();

        let mut e = env(&backend, &sandbox, &cost);
        e.latency_mode = LatencyMode::Measured;
        let trace = execute_workflow(&graph, "hi", &e).unwrap();
        assert!(trace.total_latency > 0.0, "a real subprocess takes time");
        let max_node = trace
            .outputs
            .iter()
            .map(|o| o.wall_time)
            .fold(0.0, f64::max);
        assert!(trace.total_latency >= max_node);
    }

    #[test]
    fn trace_outputs_follow_the_topological_order() {
        let backend = ScriptedBackend::echo();
        let sandbox = Sandbox::default();
        let cost = free_cost();
        let mut nodes = std::collections::BTreeMap::new();
        for id in ["m", "a", "z", "k"] {
            nodes.insert(NodeId::new(id), llm("{query}"));
        }
        nodes.insert(NodeId::new("end"), llm("{p} {q} {r} {s}"));
        let graph = WorkflowGraph::new(
            nodes,
            vec![
                GuardedEdge::new("m", "end", "p"),
                GuardedEdge::new("a", "end", "q"),
                GuardedEdge::new("z", "end", "r"),
                GuardedEdge::new("k", "end", "s"),
            ],
            NodeId::new("end"),
        )
        .into_validated()
        .unwrap();

        let trace = execute_workflow(&graph, "x", &env(&backend, &sandbox, &cost)).unwrap();
        let executed: Vec<NodeId> = trace.outputs.iter().map(|o| o.node.clone()).collect();
        assert_eq!(executed, graph.topo_order());
    }

    #[test]
    fn guarded_fallback_routes_by_content() {
        // Two alternatives for the same binding: digits go to the digit
        // branch, everything else falls back.
        let backend = ScriptedBackend::echo();
        let sandbox = Sandbox::default();
        let cost = free_cost();
        let mut nodes = std::collections::BTreeMap::new();
        nodes.insert(NodeId::new("src"), llm("{query}"));
        nodes.insert(
            NodeId::new("fmt"),
            code("import json,sys\nprint('num')", &[]),
        );
        nodes.insert(NodeId::new("out"), llm("{v}"));
        let graph = WorkflowGraph::new(
            nodes,
            vec![
                GuardedEdge::new("src", "fmt", "ignored"),
                GuardedEdge::new("src", "out", "v").with_guard(r#"matches("^[0-9]+$")"#),
                GuardedEdge::new("fmt", "out", "v").with_guard(r#"not(is_absent())"#),
            ],
            NodeId::new("out"),
        )
        .into_validated()
        .unwrap();

        let trace = execute_workflow(&graph, "42", &env(&backend, &sandbox, &cost)).unwrap();
        // Canonical edge order: (fmt,out,v) sorts before (src,out,v), so the
        // fmt alternative wins while both guards pass.
        assert_eq!(trace.answer, NodeValue::Text("num".into()));

        let trace = execute_workflow(&graph, "hello", &env(&backend, &sandbox, &cost)).unwrap();
        assert_eq!(trace.answer, NodeValue::Text("num".into()));
    }
}
