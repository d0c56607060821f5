//! Structural validation of candidate graphs and deterministic
//! topological ordering.
//!
//! Violations are data, not failures: the meta-agent hands us arbitrary
//! candidate structures and a rejected candidate is a normal outcome of an
//! evolution iteration.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt;

use thiserror::Error;

use crate::guard::GuardExpr;

use super::{NodeId, NodeSpec, WorkflowGraph, QUERY_BINDING};

/// One structural defect found in a candidate graph.
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    /// The graph has no nodes.
    EmptyGraph,
    /// A directed cycle exists; `involving` is one node on it.
    Cycle { involving: NodeId },
    /// An edge references a node id that is not in the node set.
    MissingEndpoint {
        from: NodeId,
        to: NodeId,
        missing: NodeId,
    },
    /// The declared terminal id is not in the node set.
    TerminalNotFound { terminal: NodeId },
    /// `node` has no directed path to the terminal (a dead node).
    TerminalUnreachable { node: NodeId },
    /// A code-node signature input has no incoming edge delivering it.
    UnboundCodeInput { node: NodeId, input: String },
    /// A code-node signature input is delivered by more than one edge.
    MultiplyBoundCodeInput { node: NodeId, input: String },
    /// An instruction placeholder matches neither an incoming edge label
    /// nor the reserved query binding.
    UnknownPlaceholder { node: NodeId, placeholder: String },
    /// Two edges share the same (from, to, label) triple.
    DuplicateEdge {
        from: NodeId,
        to: NodeId,
        label: String,
    },
    /// An edge loops a node onto itself.
    SelfLoop { node: NodeId },
    /// An edge label shadows the reserved query binding.
    ReservedLabel { from: NodeId, to: NodeId },
    /// LLM temperature outside [0, 1].
    InvalidTemperature { node: NodeId, temperature: f64 },
    /// A code-node signature declares the same input name twice.
    DuplicateSignatureInput { node: NodeId, input: String },
    /// An edge guard does not parse in the guard predicate language.
    InvalidGuard {
        from: NodeId,
        to: NodeId,
        label: String,
        error: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyGraph => write!(f, "empty graph"),
            Violation::Cycle { involving } => write!(f, "cycle involving node '{involving}'"),
            Violation::MissingEndpoint { from, to, missing } => {
                write!(f, "edge {from}->{to} references unknown node '{missing}'")
            }
            Violation::TerminalNotFound { terminal } => {
                write!(f, "terminal '{terminal}' is not a node")
            }
            Violation::TerminalUnreachable { node } => {
                write!(f, "node '{node}' has no path to the terminal")
            }
            Violation::UnboundCodeInput { node, input } => {
                write!(f, "code node '{node}' input '{input}' has no incoming edge")
            }
            Violation::MultiplyBoundCodeInput { node, input } => {
                write!(
                    f,
                    "code node '{node}' input '{input}' is bound by more than one edge"
                )
            }
            Violation::UnknownPlaceholder { node, placeholder } => {
                write!(
                    f,
                    "node '{node}' placeholder '{{{placeholder}}}' matches no incoming edge label"
                )
            }
            Violation::DuplicateEdge { from, to, label } => {
                write!(f, "duplicate edge {from}->{to} label '{label}'")
            }
            Violation::SelfLoop { node } => write!(f, "self-loop on node '{node}'"),
            Violation::ReservedLabel { from, to } => {
                write!(
                    f,
                    "edge {from}->{to} uses the reserved label '{QUERY_BINDING}'"
                )
            }
            Violation::InvalidTemperature { node, temperature } => {
                write!(f, "node '{node}' temperature {temperature} outside [0, 1]")
            }
            Violation::DuplicateSignatureInput { node, input } => {
                write!(f, "code node '{node}' declares input '{input}' twice")
            }
            Violation::InvalidGuard {
                from,
                to,
                label,
                error,
            } => {
                write!(
                    f,
                    "edge {from}->{to} label '{label}' has invalid guard: {error}"
                )
            }
        }
    }
}

/// Outcome of [`validate_graph`]: pass, or the list of violations found.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, pred: impl Fn(&Violation) -> bool) -> bool {
        self.violations.iter().any(pred)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join("; "))
    }
}

/// Check every structural invariant of the genome. Accepts arbitrary
/// candidate structures; all defects are reported together rather than
/// failing fast, so rejection reasons stay informative for reflection.
pub fn validate_graph(graph: &WorkflowGraph) -> ValidationReport {
    let mut violations = Vec::new();

    if graph.nodes.is_empty() {
        violations.push(Violation::EmptyGraph);
        return ValidationReport { violations };
    }

    if !graph.nodes.contains_key(&graph.terminal) {
        violations.push(Violation::TerminalNotFound {
            terminal: graph.terminal.clone(),
        });
    }

    // Per-node spec invariants.
    for (id, spec) in &graph.nodes {
        match spec {
            NodeSpec::Llm(llm) => {
                if !(0.0..=1.0).contains(&llm.temperature) || llm.temperature.is_nan() {
                    violations.push(Violation::InvalidTemperature {
                        node: id.clone(),
                        temperature: llm.temperature,
                    });
                }
            }
            NodeSpec::Code(code) => {
                let mut seen = BTreeSet::new();
                for input in &code.inputs {
                    if !seen.insert(input.name.as_str()) {
                        violations.push(Violation::DuplicateSignatureInput {
                            node: id.clone(),
                            input: input.name.clone(),
                        });
                    }
                }
            }
        }
    }

    // Edge-level invariants.
    let mut seen_edges = BTreeSet::new();
    for edge in &graph.edges {
        let mut endpoints_ok = true;
        for missing in [&edge.from, &edge.to] {
            if !graph.nodes.contains_key(missing) {
                violations.push(Violation::MissingEndpoint {
                    from: edge.from.clone(),
                    to: edge.to.clone(),
                    missing: missing.clone(),
                });
                endpoints_ok = false;
            }
        }
        if edge.from == edge.to && endpoints_ok {
            violations.push(Violation::SelfLoop {
                node: edge.from.clone(),
            });
        }
        if edge.label == QUERY_BINDING {
            violations.push(Violation::ReservedLabel {
                from: edge.from.clone(),
                to: edge.to.clone(),
            });
        }
        if !seen_edges.insert((edge.from.clone(), edge.to.clone(), edge.label.clone())) {
            violations.push(Violation::DuplicateEdge {
                from: edge.from.clone(),
                to: edge.to.clone(),
                label: edge.label.clone(),
            });
        }
        if let Some(guard) = &edge.guard {
            if let Err(e) = GuardExpr::parse(guard) {
                violations.push(Violation::InvalidGuard {
                    from: edge.from.clone(),
                    to: edge.to.clone(),
                    label: edge.label.clone(),
                    error: e.to_string(),
                });
            }
        }
    }

    // Binding checks per destination node.
    for (id, spec) in &graph.nodes {
        let incoming_labels: Vec<&str> = graph
            .edges
            .iter()
            .filter(|e| &e.to == id && graph.nodes.contains_key(&e.from))
            .map(|e| e.label.as_str())
            .collect();
        match spec {
            NodeSpec::Code(code) => {
                for input in &code.inputs {
                    if input.name == QUERY_BINDING {
                        // Reserved binding is always delivered.
                        continue;
                    }
                    let n = incoming_labels.iter().filter(|l| **l == input.name).count();
                    if n == 0 {
                        violations.push(Violation::UnboundCodeInput {
                            node: id.clone(),
                            input: input.name.clone(),
                        });
                    } else if n > 1 {
                        violations.push(Violation::MultiplyBoundCodeInput {
                            node: id.clone(),
                            input: input.name.clone(),
                        });
                    }
                }
            }
            NodeSpec::Llm(llm) => {
                for placeholder in llm.placeholders() {
                    if placeholder == QUERY_BINDING {
                        continue;
                    }
                    if !incoming_labels.contains(&placeholder.as_str()) {
                        violations.push(Violation::UnknownPlaceholder {
                            node: id.clone(),
                            placeholder,
                        });
                    }
                }
            }
        }
    }

    // Acyclicity over edges with valid endpoints (missing endpoints are
    // already reported; skip them so one defect does not cascade).
    if let Err(cycle) = topological_order(graph) {
        violations.push(Violation::Cycle {
            involving: cycle.involving,
        });
    } else if graph.nodes.contains_key(&graph.terminal) {
        // Reachability of the terminal from every node, on the acyclic graph.
        let mut reaches: BTreeSet<NodeId> = BTreeSet::new();
        reaches.insert(graph.terminal.clone());
        // Reverse-reachability fixpoint; graphs are small.
        loop {
            let before = reaches.len();
            for edge in &graph.edges {
                if reaches.contains(&edge.to) && graph.nodes.contains_key(&edge.from) {
                    reaches.insert(edge.from.clone());
                }
            }
            if reaches.len() == before {
                break;
            }
        }
        for id in graph.nodes.keys() {
            if !reaches.contains(id) {
                violations.push(Violation::TerminalUnreachable { node: id.clone() });
            }
        }
    }

    ValidationReport { violations }
}

/// The graph contains a directed cycle.
#[derive(Clone, Debug, Error, PartialEq, Eq)]
#[error("graph has a cycle involving node '{involving}'")]
pub struct CycleError {
    pub involving: NodeId,
}

/// Kahn's algorithm with ready nodes drawn in lexicographic `NodeId` order,
/// so execution traces are reproducible. Edges with endpoints outside the
/// node set are ignored (they are reported separately by validation).
pub fn topological_order(graph: &WorkflowGraph) -> Result<Vec<NodeId>, CycleError> {
    let mut indegree: BTreeMap<&NodeId, usize> = graph.nodes.keys().map(|id| (id, 0)).collect();
    for edge in &graph.edges {
        if graph.nodes.contains_key(&edge.from) && graph.nodes.contains_key(&edge.to) {
            *indegree.get_mut(&edge.to).expect("endpoint checked") += 1;
        }
    }

    let mut ready: BinaryHeap<Reverse<&NodeId>> = indegree
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(id, _)| Reverse(*id))
        .collect();
    let mut order = Vec::with_capacity(graph.nodes.len());

    while let Some(Reverse(id)) = ready.pop() {
        order.push(id.clone());
        for edge in graph.edges.iter().filter(|e| &e.from == id) {
            if let Some(d) = indegree.get_mut(&edge.to) {
                *d -= 1;
                if *d == 0 {
                    ready.push(Reverse(&edge.to));
                }
            }
        }
    }

    if order.len() != graph.nodes.len() {
        let involving = graph
            .nodes
            .keys()
            .find(|id| !order.contains(id))
            .expect("some node is missing from the order")
            .clone();
        return Err(CycleError { involving });
    }
    Ok(order)
}
