//! Shared test support: random graph generators, brute-force oracles, and
//! the scripted end-to-end evolution fixture.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::Rng;

use dagevo::backend::{CostTable, Purpose, RuleResponse, ScriptedRule};
use dagevo::driver::{write_dataset, BackendConfig, RunConfig};
use dagevo::ir::{
    CodeNodeSpec, GuardedEdge, LlmNodeSpec, NodeId, NodeSpec, SignatureInput, ValidatedWorkflow,
    WorkflowGraph, QUERY_BINDING,
};
use dagevo::scoring::{Gold, Task};

// ---------------------------------------------------------------------------
// Random graphs
// ---------------------------------------------------------------------------

/// A random valid-by-construction workflow graph with up to `max_nodes`
/// nodes: nodes are laid out along a hidden topological order, every
/// non-terminal node feeds something later, code inputs exactly match their
/// incoming labels, and placeholders only reference delivered bindings.
pub fn random_valid_graph(rng: &mut StdRng, max_nodes: usize) -> WorkflowGraph {
    let n = rng.gen_range(1..=max_nodes.max(1));
    // Random distinct ids, then a random topological layout over them.
    let mut ids: Vec<NodeId> = (0..n).map(|i| NodeId::new(format!("n{i:02}"))).collect();
    ids.shuffle(rng);

    let mut edges: Vec<GuardedEdge> = Vec::new();
    let mut incoming: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    let mut edge_id = 0;
    for pos in 0..n.saturating_sub(1) {
        // At least one forward edge from every non-terminal node.
        let targets = 1 + rng.gen_range(0..2usize.min(n - pos - 1));
        let mut picked = BTreeSet::new();
        for _ in 0..targets {
            picked.insert(rng.gen_range(pos + 1..n));
        }
        for target in picked {
            let label = format!("e{edge_id:03}");
            edge_id += 1;
            let mut edge = GuardedEdge::new(ids[pos].clone(), ids[target].clone(), label.clone());
            if rng.gen_bool(0.2) {
                let guard = match rng.gen_range(0..4) {
                    0 => r#"contains("x")"#.to_string(),
                    1 => r#"not(is_absent())"#.to_string(),
                    2 => r#"matches("^[0-9]+$")"#.to_string(),
                    _ => r#"equals("done")"#.to_string(),
                };
                edge = edge.with_guard(guard);
            }
            edges.push(edge);
            incoming.entry(target).or_default().push(label);
        }
    }

    let mut nodes = BTreeMap::new();
    for (pos, id) in ids.iter().enumerate() {
        let labels = incoming.get(&pos).cloned().unwrap_or_default();
        let spec = if rng.gen_bool(0.6) {
            // LLM node referencing a random subset of its bindings.
            let mut instruction = String::from("Work on {query}");
            for label in &labels {
                if rng.gen_bool(0.7) {
                    instruction.push_str(&format!(" with {{{label}}}"));
                }
            }
            NodeSpec::Llm(LlmNodeSpec {
                model: format!("model-{}", rng.gen_range(0..3)),
                instruction,
                temperature: (rng.gen_range(0..=100) as f64) / 100.0,
            })
        } else {
            let mut inputs: Vec<SignatureInput> = labels
                .iter()
                .map(|l| SignatureInput {
                    name: l.clone(),
                    type_name: "text".into(),
                })
                .collect();
            if rng.gen_bool(0.3) {
                inputs.push(SignatureInput {
                    name: QUERY_BINDING.into(),
                    type_name: "text".into(),
                });
            }
            NodeSpec::Code(CodeNodeSpec::new("print('ok')", inputs, "text"))
        };
        nodes.insert(id.clone(), spec);
    }

    let terminal = ids[n - 1].clone();
    WorkflowGraph::new(nodes, edges, terminal)
}

/// Mutations that usually break a graph, for validator fuzzing.
pub fn mutate_graph(rng: &mut StdRng, graph: &WorkflowGraph) -> WorkflowGraph {
    let mut g = graph.clone();
    let ids: Vec<NodeId> = g.nodes.keys().cloned().collect();
    match rng.gen_range(0..8) {
        0 => {
            // Back edge: likely creates a cycle.
            if ids.len() >= 2 {
                let a = ids[rng.gen_range(0..ids.len())].clone();
                let b = ids[rng.gen_range(0..ids.len())].clone();
                g.edges.push(GuardedEdge::new(
                    a,
                    b,
                    format!("m{}", rng.gen_range(0..999)),
                ));
            }
        }
        1 => {
            // Ghost endpoint.
            if !ids.is_empty() {
                let a = ids[rng.gen_range(0..ids.len())].clone();
                g.edges
                    .push(GuardedEdge::new(a, NodeId::new("ghost"), "mx"));
            }
        }
        2 => {
            // Duplicate an existing edge.
            if let Some(edge) = g.edges.first().cloned() {
                g.edges.push(edge);
            }
        }
        3 => {
            // Self loop.
            if !ids.is_empty() {
                let a = ids[rng.gen_range(0..ids.len())].clone();
                g.edges.push(GuardedEdge::new(a.clone(), a, "selfy"));
            }
        }
        4 => {
            // Out-of-range temperature.
            for spec in g.nodes.values_mut() {
                if let NodeSpec::Llm(llm) = spec {
                    llm.temperature = 1.5;
                    break;
                }
            }
        }
        5 => {
            // Unbound code input.
            for spec in g.nodes.values_mut() {
                if let NodeSpec::Code(code) = spec {
                    *code = CodeNodeSpec::new(
                        code.source.clone(),
                        code.inputs
                            .iter()
                            .cloned()
                            .chain([SignatureInput {
                                name: "unbound_in".into(),
                                type_name: "text".into(),
                            }])
                            .collect(),
                        code.output_type.clone(),
                    );
                    break;
                }
            }
        }
        6 => {
            // Unknown placeholder.
            for spec in g.nodes.values_mut() {
                if let NodeSpec::Llm(llm) = spec {
                    llm.instruction.push_str(" {ghost_binding}");
                    break;
                }
            }
        }
        _ => {
            // Reserved edge label.
            if ids.len() >= 2 {
                g.edges.push(GuardedEdge::new(
                    ids[0].clone(),
                    ids[1].clone(),
                    QUERY_BINDING,
                ));
            }
        }
    }
    WorkflowGraph::new(g.nodes, g.edges, g.terminal)
}

// ---------------------------------------------------------------------------
// Brute-force oracles
// ---------------------------------------------------------------------------

fn adjacency(graph: &WorkflowGraph) -> BTreeMap<&NodeId, Vec<&NodeId>> {
    let mut adj: BTreeMap<&NodeId, Vec<&NodeId>> =
        graph.nodes.keys().map(|k| (k, vec![])).collect();
    for edge in &graph.edges {
        if graph.nodes.contains_key(&edge.from) && graph.nodes.contains_key(&edge.to) {
            adj.get_mut(&edge.from).unwrap().push(&edge.to);
        }
    }
    adj
}

/// Cycle detection by exhaustive walk enumeration: a cycle exists iff some
/// node can return to itself within n steps.
pub fn oracle_has_cycle(graph: &WorkflowGraph) -> bool {
    let adj = adjacency(graph);
    let n = graph.nodes.len();
    for start in graph.nodes.keys() {
        let mut frontier: Vec<&NodeId> = vec![start];
        for _ in 0..n {
            let mut next = Vec::new();
            for node in frontier {
                for succ in &adj[node] {
                    if *succ == start {
                        return true;
                    }
                    next.push(*succ);
                }
            }
            if next.is_empty() {
                break;
            }
            next.sort();
            next.dedup();
            frontier = next;
        }
    }
    false
}

/// Reachability of `to` from `from` by exhaustive walk enumeration.
pub fn oracle_reaches(graph: &WorkflowGraph, from: &NodeId, to: &NodeId) -> bool {
    if from == to {
        return true;
    }
    let adj = adjacency(graph);
    let n = graph.nodes.len();
    let mut frontier = vec![from];
    for _ in 0..n {
        let mut next = Vec::new();
        for node in frontier {
            for succ in &adj[node] {
                if *succ == to {
                    return true;
                }
                next.push(*succ);
            }
        }
        if next.is_empty() {
            return false;
        }
        next.sort();
        next.dedup();
        frontier = next;
    }
    false
}

/// Independent accept/reject decision over the full invariant catalog,
/// built on the walk-enumeration primitives above.
pub fn oracle_accepts(graph: &WorkflowGraph) -> bool {
    if graph.nodes.is_empty() || !graph.nodes.contains_key(&graph.terminal) {
        return false;
    }
    let mut seen = BTreeSet::new();
    for edge in &graph.edges {
        if !graph.nodes.contains_key(&edge.from) || !graph.nodes.contains_key(&edge.to) {
            return false;
        }
        if edge.from == edge.to || edge.label == QUERY_BINDING {
            return false;
        }
        if !seen.insert((&edge.from, &edge.to, &edge.label)) {
            return false;
        }
        if let Some(guard) = &edge.guard {
            if dagevo::guard::GuardExpr::parse(guard).is_err() {
                return false;
            }
        }
    }
    for (id, spec) in &graph.nodes {
        let labels: Vec<&str> = graph
            .edges
            .iter()
            .filter(|e| &e.to == id)
            .map(|e| e.label.as_str())
            .collect();
        match spec {
            NodeSpec::Llm(llm) => {
                if !(0.0..=1.0).contains(&llm.temperature) || llm.temperature.is_nan() {
                    return false;
                }
                for placeholder in llm.placeholders() {
                    if placeholder != QUERY_BINDING && !labels.contains(&placeholder.as_str()) {
                        return false;
                    }
                }
            }
            NodeSpec::Code(code) => {
                let mut names = BTreeSet::new();
                for input in &code.inputs {
                    if !names.insert(&input.name) {
                        return false;
                    }
                    if input.name == QUERY_BINDING {
                        continue;
                    }
                    if labels.iter().filter(|l| **l == input.name).count() != 1 {
                        return false;
                    }
                }
            }
        }
    }
    if oracle_has_cycle(graph) {
        return false;
    }
    graph
        .nodes
        .keys()
        .all(|id| oracle_reaches(graph, id, &graph.terminal))
}

// ---------------------------------------------------------------------------
// End-to-end scripted fixture
// ---------------------------------------------------------------------------

pub const FIXTURE_TASK_MODEL: &str = "task-model";
pub const FIXTURE_META_MODEL: &str = "meta-model";

/// 20 two-digit additions; ids q00..q19, answers 23, 25, ...
pub fn arithmetic_tasks() -> Vec<Task> {
    (0..20)
        .map(|i| Task {
            id: format!("q{i:02}"),
            query: format!("{}+{}", 10 + i, 13 + i),
            gold: Gold::Answer(format!("{}", 23 + 2 * i)),
        })
        .collect()
}

/// Scripted task backend: answers the first 12 queries correctly (60%) by
/// matching the query text inside the prompt; everything else gets a wrong
/// fallback answer.
pub fn scripted_task_rules() -> Vec<ScriptedRule> {
    let mut rules: Vec<ScriptedRule> = arithmetic_tasks()
        .iter()
        .take(12)
        .map(|task| {
            let Gold::Answer(answer) = &task.gold else {
                unreachable!()
            };
            ScriptedRule {
                purpose: Some(Purpose::TaskNode),
                prompt_contains: Some(task.query.clone()),
                response: RuleResponse::Text(answer.clone()),
                wall_time: 0.0,
            }
        })
        .collect();
    rules.push(ScriptedRule {
        purpose: Some(Purpose::TaskNode),
        prompt_contains: None,
        response: RuleResponse::Text("0".into()),
        wall_time: 0.0,
    });
    rules
}

/// The hybrid workflow the scripted meta-agent proposes at iteration 3:
/// one LLM restatement node plus a code node that computes the sum
/// deterministically from the reserved query binding.
pub fn hybrid_solver() -> ValidatedWorkflow {
    let mut nodes = BTreeMap::new();
    nodes.insert(
        NodeId::new("extract"),
        NodeSpec::Llm(LlmNodeSpec {
            model: FIXTURE_TASK_MODEL.into(),
            instruction: "Restate the expression in {query}".into(),
            temperature: 0.0,
        }),
    );
    nodes.insert(
        NodeId::new("solve"),
        NodeSpec::Code(CodeNodeSpec::new(
            "import json, sys\nobj = json.load(sys.stdin)\nq = obj['query']\na, b = q.split('+')\nprint(int(a) + int(b))",
            vec![
                SignatureInput { name: "hint".into(), type_name: "text".into() },
                SignatureInput { name: QUERY_BINDING.into(), type_name: "text".into() },
            ],
            "text",
        )),
    );
    WorkflowGraph::new(
        nodes,
        vec![GuardedEdge::new("extract", "solve", "hint")],
        NodeId::new("solve"),
    )
    .into_validated()
    .expect("hybrid fixture is valid")
}

/// A decoy document with a 2-cycle: valid JSON, invalid graph.
pub const CYCLIC_DOC: &str = r#"{
  "version": 1,
  "nodes": {
    "a": {"kind": "llm", "model": "task-model", "instruction": "{x}", "temperature": 0.2},
    "b": {"kind": "llm", "model": "task-model", "instruction": "{y}", "temperature": 0.2}
  },
  "edges": [
    {"from": "a", "to": "b", "label": "y"},
    {"from": "b", "to": "a", "label": "x"}
  ],
  "terminal": "b"
}"#;

/// A valid single-LLM variant the meta-agent falls back to.
pub fn variant_doc() -> String {
    let graph = dagevo::ir::seed_workflow(
        FIXTURE_TASK_MODEL,
        "Answer with just the result: {query}",
        0.1,
    );
    dagevo::ir::serialize(&graph)
}

/// Scripted meta-agent: a fixed diagnosis for every reflect call; for
/// generate calls, iteration 1 yields the cyclic decoy, iteration 2 an
/// unparseable completion (its repair retry matches the same rule), and
/// iteration 3 the hybrid solver; every other iteration proposes the
/// single-LLM variant.
pub fn scripted_meta_rules() -> Vec<ScriptedRule> {
    let hybrid_doc = dagevo::ir::serialize(&hybrid_solver());
    vec![
        ScriptedRule {
            purpose: Some(Purpose::MetaReflect),
            prompt_contains: None,
            response: RuleResponse::Text(
                "Offload the arithmetic to a deterministic code node; keep one LLM node for extraction.".into(),
            ),
            wall_time: 0.0,
        },
        ScriptedRule {
            purpose: Some(Purpose::MetaGenerate),
            prompt_contains: Some("(iteration 1)".into()),
            response: RuleResponse::Text(format!("A bold new design:\n```json\n{CYCLIC_DOC}\n```")),
            wall_time: 0.0,
        },
        ScriptedRule {
            purpose: Some(Purpose::MetaGenerate),
            prompt_contains: Some("(iteration 2)".into()),
            response: RuleResponse::Text("I would rather describe the workflow in prose today.".into()),
            wall_time: 0.0,
        },
        ScriptedRule {
            purpose: Some(Purpose::MetaGenerate),
            prompt_contains: Some("(iteration 3)".into()),
            response: RuleResponse::Text(format!("Here it is:\n```json\n{hybrid_doc}\n```")),
            wall_time: 0.0,
        },
        ScriptedRule {
            purpose: Some(Purpose::MetaGenerate),
            prompt_contains: None,
            response: RuleResponse::Text(format!("```json\n{}\n```", variant_doc())),
            wall_time: 0.0,
        },
    ]
}

/// Build the full end-to-end run configuration in `dir`.
pub fn e2e_config(dir: &Path, out_name: &str) -> RunConfig {
    let dataset_path: PathBuf = dir.join("arith.jsonl");
    if !dataset_path.exists() {
        write_dataset(&dataset_path, &arithmetic_tasks()).expect("fixture dataset writes");
    }
    let mut config = RunConfig::standard(dataset_path, dir.join(out_name));
    config.seed = 7;
    config.task_model = FIXTURE_TASK_MODEL.into();
    config.meta_model = FIXTURE_META_MODEL.into();
    config.cost_table = CostTable::new().with_model(FIXTURE_TASK_MODEL, 0.0, 0.0);
    config.task_backend = BackendConfig::Scripted {
        rules: scripted_task_rules(),
        rules_file: None,
    };
    config.meta_backend = BackendConfig::Scripted {
        rules: scripted_meta_rules(),
        rules_file: None,
    };
    config.parallelism = 2;
    config
}
