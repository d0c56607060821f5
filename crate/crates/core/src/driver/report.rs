//! Machine-readable run reports with stable column order: the convergence
//! table, the archive landscape, the lineage of the best record, and a
//! JSON summary. Identical states render identical bytes.

use serde_json::json;

use crate::ir::serialize;
use crate::population::CandidateRecord;

use super::{RowStatus, RunConfig, RunState};

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub convergence_csv: String,
    pub landscape_csv: String,
    pub lineage_csv: String,
    pub summary_json: String,
    pub best_workflow_doc: String,
}

fn opt(v: &Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn status_str(s: RowStatus) -> &'static str {
    match s {
        RowStatus::Seed => "seed",
        RowStatus::Completed => "completed",
        RowStatus::Screened => "screened",
        RowStatus::Invalid => "invalid",
    }
}

fn convergence(state: &RunState) -> String {
    let mut out = String::from(
        "t,island,status,reward,stage1_reward,best_so_far,queries_executed,meta_tokens_total,fingerprint,rejection\n",
    );
    for row in &state.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            row.t,
            row.island,
            status_str(row.status),
            opt(&row.reward),
            opt(&row.stage1_reward),
            row.best_so_far,
            row.queries_executed,
            row.meta_tokens_total,
            row.fingerprint.as_deref().unwrap_or(""),
            csv_escape(row.rejection.as_deref().unwrap_or("")),
        ));
    }
    out
}

fn csv_escape(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

fn landscape(state: &RunState) -> String {
    let mut out =
        String::from("island,count_bin,prop_bin,node_count,llm_proportion,reward,fingerprint\n");
    for island in &state.islands {
        for (cell, entry) in island.archive() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                island.id,
                cell.count_bin,
                cell.prop_bin,
                entry.record.descriptor.node_count,
                entry.record.descriptor.llm_proportion,
                entry.record.reward,
                entry.record.fingerprint,
            ));
        }
    }
    out
}

/// Walk parents from the best record back to the seed. Parent fingerprints
/// resolve to their earliest occurrence in the global history.
fn lineage_chain(state: &RunState) -> Vec<&CandidateRecord> {
    let find = |fp: &str| state.global_history.iter().find(|r| r.fingerprint == fp);
    let mut chain = vec![&state.best];
    let mut guard = state.global_history.len() + 1;
    while let Some(parent_fp) = &chain
        .last()
        .expect("chain non-empty")
        .lineage
        .parent_fingerprint
    {
        guard = guard.saturating_sub(1);
        if guard == 0 {
            break;
        }
        match find(parent_fp) {
            Some(parent) => chain.push(parent),
            None => break,
        }
    }
    chain
}

fn lineage(state: &RunState) -> String {
    let mut out = String::from("depth,iteration,reward,fingerprint,parent_fingerprint\n");
    for (depth, record) in lineage_chain(state).iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            depth,
            record.lineage.iteration,
            record.reward,
            record.fingerprint,
            record.lineage.parent_fingerprint.as_deref().unwrap_or(""),
        ));
    }
    out
}

fn summary(state: &RunState, config: &RunConfig) -> String {
    let occupied: Vec<serde_json::Value> = state
        .islands
        .iter()
        .map(|island| {
            json!({
                "island": island.id,
                "occupied_cells": island.archive().len(),
                "history_len": island.history().len(),
            })
        })
        .collect();
    let doc = json!({
        "version": super::CHECKPOINT_VERSION,
        "seed": config.seed,
        "iterations_run": state.t,
        "iterations_configured": config.iterations,
        "invalid_candidates": state.invalid_candidates,
        "meta_prompt_tokens": state.meta_prompt_tokens,
        "meta_completion_tokens": state.meta_completion_tokens,
        "seed_reward": state.seed_reward,
        "best": {
            "reward": state.best.reward,
            "fingerprint": state.best.fingerprint,
            "node_count": state.best.descriptor.node_count,
            "llm_proportion": state.best.descriptor.llm_proportion,
            "found_at_iteration": state.best.lineage.iteration,
        },
        "islands": occupied,
        "migrations": state.migrations.iter().map(|m| m.t).collect::<Vec<_>>(),
    });
    serde_json::to_string_pretty(&doc).expect("summary serializes")
}

/// Render every report document from a state.
pub fn render_report(state: &RunState, config: &RunConfig) -> RunReport {
    RunReport {
        convergence_csv: convergence(state),
        landscape_csv: landscape(state),
        lineage_csv: lineage(state),
        summary_json: summary(state, config),
        best_workflow_doc: serialize(&state.best.graph),
    }
}
