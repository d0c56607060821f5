//! Evolutionary engine for heterogeneous agentic workflows.
//!
//! A workflow is a validated DAG mixing probabilistic LLM nodes with
//! deterministic code nodes. The engine searches the space of such graphs
//! with a multi-island MAP-Elites strategy: a meta-agent LLM reflects on a
//! parent candidate's failure logs and generates a new workflow document,
//! which is screened and scored by a cascaded sandbox evaluation against a
//! composite reward over task performance, monetary cost, and latency.
//!
//! Module map:
//! - [`ir`]: workflow genome (graph types, validation, canonical documents,
//!   fingerprints, behavior descriptors)
//! - [`guard`]: the predicate language attached to edges
//! - [`backend`]: LLM invocation boundary (live HTTP, replay, scripted) and
//!   token-to-cost accounting
//! - [`exec`]: topological workflow execution with a subprocess sandbox for
//!   code nodes
//! - [`scoring`]: per-query scores and the aggregated reward
//! - [`population`]: per-island elite archives, histories, parent sampling,
//!   and ring migration
//! - [`meta`]: the reflect-then-generate meta-agent
//! - [`cascade`]: two-stage gated candidate evaluation
//! - [`driver`]: the evolution loop, checkpointing, datasets, and reports

pub mod backend;
pub mod cascade;
pub mod driver;
pub mod exec;
pub mod guard;
pub mod ir;
pub mod meta;
pub mod population;
pub mod scoring;
