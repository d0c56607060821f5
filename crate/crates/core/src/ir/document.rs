//! The workflow document: the textual form of the genome.
//!
//! This is the wire format between the meta-agent and the engine, and the
//! on-disk persistence format. The canonical form (keys sorted, edges
//! sorted by `(from, to, label)`, no insignificant whitespace) is what
//! [`fingerprint`] hashes, so equal graphs always get equal digests.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{ValidatedWorkflow, WorkflowGraph};

/// Version tag expected in every workflow document.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DocumentError {
    #[error("malformed document at line {line}, column {column}: {message}")]
    Malformed {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema violation{}: {message}", location.as_ref().map(|l| format!(" at {l}")).unwrap_or_default())]
    SchemaViolation {
        location: Option<String>,
        message: String,
    },
    #[error("unsupported document version {found} (expected {SCHEMA_VERSION})")]
    Version { found: u32 },
}

#[derive(Serialize, Deserialize)]
struct Document {
    version: u32,
    #[serde(flatten)]
    graph: WorkflowGraph,
}

/// Render a validated graph as a human-readable document.
pub fn serialize(graph: &ValidatedWorkflow) -> String {
    let doc = Document {
        version: SCHEMA_VERSION,
        graph: graph.graph().clone(),
    };
    serde_json::to_string_pretty(&doc).expect("workflow documents always serialize")
}

/// Parse an arbitrary text document into an (unvalidated) graph.
///
/// Syntax errors report their location; schema violations (wrong types,
/// out-of-range temperatures, missing fields) are distinguished from them
/// so the meta-agent repair prompt can quote the right failure.
pub fn deserialize(text: &str) -> Result<WorkflowGraph, DocumentError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| DocumentError::Malformed {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;

    let version = value
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| DocumentError::SchemaViolation {
            location: Some("version".into()),
            message: "missing or non-integer 'version' field".into(),
        })?;
    if version != u64::from(SCHEMA_VERSION) {
        return Err(DocumentError::Version {
            found: version as u32,
        });
    }

    let doc: Document =
        serde_json::from_value(value).map_err(|e| DocumentError::SchemaViolation {
            location: None,
            message: e.to_string(),
        })?;

    // Range checks that the type system cannot express.
    for (id, spec) in &doc.graph.nodes {
        if let super::NodeSpec::Llm(llm) = spec {
            if !(0.0..=1.0).contains(&llm.temperature) || llm.temperature.is_nan() {
                return Err(DocumentError::SchemaViolation {
                    location: Some(format!("nodes.{id}.temperature")),
                    message: format!("temperature {} outside [0, 1]", llm.temperature),
                });
            }
        }
        if id.as_str().is_empty() {
            return Err(DocumentError::SchemaViolation {
                location: Some("nodes".into()),
                message: "empty node id".into(),
            });
        }
    }

    Ok(doc.graph)
}

/// The canonical single-line document: keys sorted, edges sorted, compact.
pub fn to_canonical_json(graph: &ValidatedWorkflow) -> String {
    let doc = Document {
        version: SCHEMA_VERSION,
        graph: graph.graph().clone(),
    };
    // serde_json maps are BTree-backed, so object keys come out sorted;
    // edge and input lists are already normalized on construction.
    let value = serde_json::to_value(&doc).expect("workflow documents always serialize");
    serde_json::to_string(&value).expect("canonical value always serializes")
}

/// Stable content digest over the canonical document form.
pub fn fingerprint(graph: &ValidatedWorkflow) -> String {
    let canonical = to_canonical_json(graph);
    let digest = Sha256::digest(canonical.as_bytes());
    hex::encode(digest)
}
