//! The workflow genome: a validated DAG of heterogeneous nodes with
//! guarded edges.
//!
//! Graphs are immutable after validation and safe to share across
//! concurrent evaluators; mutation happens only by constructing new graphs.

mod document;
mod validate;

pub use document::{
    deserialize, fingerprint, serialize, to_canonical_json, DocumentError, SCHEMA_VERSION,
};
pub use validate::{topological_order, validate_graph, CycleError, ValidationReport, Violation};

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Binding name every node receives implicitly: the task query text.
/// Edge labels and code-node inputs may not shadow it with an edge.
pub const QUERY_BINDING: &str = "query";

/// Opaque node identifier, unique within a graph.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        NodeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_string())
    }
}

/// A probabilistic reasoning node: a backbone model, an instruction template
/// with named `{placeholder}` inputs, and a sampling temperature in [0, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlmNodeSpec {
    pub model: String,
    pub instruction: String,
    pub temperature: f64,
}

impl LlmNodeSpec {
    /// Placeholder names referenced by the instruction template, in order of
    /// first appearance. A placeholder is `{name}` where `name` is an
    /// identifier; malformed braces are left as literal text.
    pub fn placeholders(&self) -> Vec<String> {
        extract_placeholders(&self.instruction)
    }
}

pub(crate) fn extract_placeholders(template: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let bytes = template.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            if let Some(end) = template[i + 1..].find('}') {
                let name = &template[i + 1..i + 1 + end];
                if !name.is_empty()
                    && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
                    && !name.chars().next().unwrap().is_ascii_digit()
                {
                    if !out.iter().any(|n| n == name) {
                        out.push(name.to_string());
                    }
                    i += end + 2;
                    continue;
                }
            }
        }
        i += 1;
    }
    out
}

/// One declared input of a code node's signature.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignatureInput {
    pub name: String,
    #[serde(rename = "type")]
    pub type_name: String,
}

/// A deterministic execution node: script source plus an I/O signature.
/// Inputs are kept sorted by name so structural equality and the canonical
/// document form are order-insensitive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeNodeSpec {
    pub source: String,
    #[serde(deserialize_with = "sorted_inputs")]
    pub inputs: Vec<SignatureInput>,
    pub output_type: String,
}

fn sorted_inputs<'de, D>(de: D) -> Result<Vec<SignatureInput>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    let mut v = Vec::<SignatureInput>::deserialize(de)?;
    v.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(v)
}

impl CodeNodeSpec {
    pub fn new(
        source: impl Into<String>,
        mut inputs: Vec<SignatureInput>,
        output_type: impl Into<String>,
    ) -> Self {
        inputs.sort_by(|a, b| a.name.cmp(&b.name));
        CodeNodeSpec {
            source: source.into(),
            inputs,
            output_type: output_type.into(),
        }
    }
}

/// Either kind of task-level node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NodeSpec {
    Llm(LlmNodeSpec),
    Code(CodeNodeSpec),
}

impl NodeSpec {
    pub fn is_llm(&self) -> bool {
        matches!(self, NodeSpec::Llm(_))
    }
}

/// A directed edge delivering the source node's output to the destination
/// under a binding name, optionally conditioned on a guard predicate over
/// the source output. An edge whose guard evaluates false delivers nothing.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuardedEdge {
    pub from: NodeId,
    pub to: NodeId,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guard: Option<String>,
}

impl GuardedEdge {
    pub fn new(from: impl Into<NodeId>, to: impl Into<NodeId>, label: impl Into<String>) -> Self {
        GuardedEdge {
            from: from.into(),
            to: to.into(),
            label: label.into(),
            guard: None,
        }
    }

    pub fn with_guard(mut self, guard: impl Into<String>) -> Self {
        self.guard = Some(guard.into());
        self
    }

    fn sort_key(&self) -> (&NodeId, &NodeId, &str) {
        (&self.from, &self.to, &self.label)
    }
}

/// The workflow genome: heterogeneous nodes, guarded edges, and a terminal
/// node whose output is the workflow answer.
///
/// Edges are normalized to canonical `(from, to, label)` order on
/// construction; edge order carries no semantics beyond the deterministic
/// tie-break used when several guarded alternatives deliver one binding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkflowGraph {
    pub nodes: BTreeMap<NodeId, NodeSpec>,
    #[serde(deserialize_with = "sorted_edges")]
    pub edges: Vec<GuardedEdge>,
    pub terminal: NodeId,
}

fn sorted_edges<'de, D>(de: D) -> Result<Vec<GuardedEdge>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    let mut v = Vec::<GuardedEdge>::deserialize(de)?;
    v.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    Ok(v)
}

impl WorkflowGraph {
    pub fn new(
        nodes: BTreeMap<NodeId, NodeSpec>,
        mut edges: Vec<GuardedEdge>,
        terminal: NodeId,
    ) -> Self {
        edges.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        WorkflowGraph {
            nodes,
            edges,
            terminal,
        }
    }

    /// Incoming edges of `node`, in canonical order.
    pub fn incoming<'a>(&'a self, node: &'a NodeId) -> impl Iterator<Item = &'a GuardedEdge> + 'a {
        self.edges.iter().filter(move |e| &e.to == node)
    }

    /// Validate and wrap. See [`validate_graph`] for the violation catalog.
    pub fn into_validated(self) -> Result<ValidatedWorkflow, ValidationReport> {
        let report = validate_graph(&self);
        if report.is_valid() {
            Ok(ValidatedWorkflow(self))
        } else {
            Err(report)
        }
    }
}

/// A graph that passed [`validate_graph`]. Downstream modules (execution,
/// archives, the meta-agent) only accept this wrapper, so they may assume
/// acyclicity, bound inputs, and a reachable terminal.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ValidatedWorkflow(WorkflowGraph);

impl ValidatedWorkflow {
    pub fn graph(&self) -> &WorkflowGraph {
        &self.0
    }

    pub fn into_graph(self) -> WorkflowGraph {
        self.0
    }

    /// Topological order with the deterministic lexicographic tie-break.
    pub fn topo_order(&self) -> Vec<NodeId> {
        topological_order(&self.0).expect("validated graph is acyclic")
    }

    pub fn descriptor(&self) -> BehaviorDescriptor {
        behavior_descriptor(self)
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(self)
    }
}

impl std::ops::Deref for ValidatedWorkflow {
    type Target = WorkflowGraph;

    fn deref(&self) -> &WorkflowGraph {
        &self.0
    }
}

impl<'de> Deserialize<'de> for ValidatedWorkflow {
    fn deserialize<D>(de: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        let graph = WorkflowGraph::deserialize(de)?;
        graph
            .into_validated()
            .map_err(|report| serde::de::Error::custom(format!("invalid workflow graph: {report}")))
    }
}

/// Archive coordinates of a workflow: structural complexity (total node
/// count) and reasoning density (proportion of LLM nodes).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BehaviorDescriptor {
    pub node_count: usize,
    pub llm_proportion: f64,
}

/// Exact counts over a validated graph. Validation forbids empty graphs, so
/// the proportion never divides by zero.
pub fn behavior_descriptor(graph: &ValidatedWorkflow) -> BehaviorDescriptor {
    let node_count = graph.nodes.len();
    let llm = graph.nodes.values().filter(|n| n.is_llm()).count();
    BehaviorDescriptor {
        node_count,
        llm_proportion: llm as f64 / node_count as f64,
    }
}

/// The seed genome: one direct-inference LLM node and no edges.
pub fn seed_workflow(model: &str, instruction: &str, temperature: f64) -> ValidatedWorkflow {
    let root = NodeId::new("root");
    let mut nodes = BTreeMap::new();
    nodes.insert(
        root.clone(),
        NodeSpec::Llm(LlmNodeSpec {
            model: model.to_string(),
            instruction: instruction.to_string(),
            temperature,
        }),
    );
    WorkflowGraph::new(nodes, Vec::new(), root)
        .into_validated()
        .expect("seed workflow is valid by construction")
}
