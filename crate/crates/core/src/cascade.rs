//! Cascaded sandbox evaluation: cheap screening on the first half of the
//! validation set behind a reward gate, then full evaluation.
//!
//! Screened-out candidates cost exactly the stage-1 budget and count as
//! NULL for the evolution loop. Completed candidates report the reward
//! aggregated over every evaluated query, so stage-1 measurements are
//! never wasted.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, CostTable, RetryPolicy};
use crate::exec::{execute_workflow, ExecError, ExecutionEnv, LatencyMode, LogEvent, Sandbox};
use crate::ir::ValidatedWorkflow;
use crate::scoring::{
    aggregate_reward, score_code, score_math, Gold, QueryMetrics, RewardWeights, ScoringError, Task,
};

/// How the screening threshold is derived.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaMode {
    /// `gamma` is the threshold itself.
    Absolute,
    /// Threshold = `gamma` x the best reward seen so far, so the gate
    /// tightens as search improves.
    FractionOfBest,
}

/// Stage split and gate parameters. Stage 1 is the first half (rounded up)
/// of the dataset in its fixed run order; stage 2 is the remainder.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub gamma: f64,
    pub gamma_mode: GammaMode,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            gamma: 0.9,
            gamma_mode: GammaMode::FractionOfBest,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !self.gamma.is_finite() {
            return Err("gamma must be finite".into());
        }
        Ok(())
    }
}

/// Sizes of (stage 1, stage 2) for a dataset of `n` items.
pub fn stage_sizes(n: usize) -> (usize, usize) {
    let stage1 = n.div_ceil(2);
    (stage1, n - stage1)
}

/// The threshold in effect for one candidate.
pub fn effective_gamma(split: &SplitConfig, current_best_reward: f64) -> f64 {
    match split.gamma_mode {
        GammaMode::Absolute => split.gamma,
        GammaMode::FractionOfBest => split.gamma * current_best_reward,
    }
}

/// Whether the gate applies. The seed evaluation runs ungated: it must
/// always fully evaluate to ground the initial reward.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GatePolicy {
    Disabled,
    Threshold(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalStatus {
    ScreenedOut,
    Completed,
    /// Synthesis produced no candidate; recorded by the driver for the
    /// iteration log, never returned by `cascaded_eval` itself.
    Invalid,
}

/// Log excerpt of one query's run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryLog {
    pub task_id: String,
    /// Position in the run's fixed dataset order.
    pub index: usize,
    /// Run failed or scored zero.
    pub failed: bool,
    pub score: f64,
    pub events: Vec<LogEvent>,
}

/// Everything one candidate evaluation produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub status: EvalStatus,
    pub stage1_reward: Option<f64>,
    /// Reward over all evaluated queries; `None` when screened out or
    /// invalid (the NULL of the evolution loop).
    pub final_reward: Option<f64>,
    /// Per-query metrics in dataset order for the executed stages.
    pub metrics: Vec<QueryMetrics>,
    /// Per-query excerpts, failures first.
    pub logs: Vec<QueryLog>,
    pub queries_executed: u64,
}

impl EvalOutcome {
    /// Placeholder outcome for a failed synthesis.
    pub fn invalid() -> Self {
        EvalOutcome {
            status: EvalStatus::Invalid,
            stage1_reward: None,
            final_reward: None,
            metrics: Vec::new(),
            logs: Vec::new(),
            queries_executed: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error("scoring failed: {0}")]
    Scoring(ScoringError),
    #[error("dataset is empty")]
    EmptyDataset,
}

/// Shared evaluation context for one run.
pub struct EvalContext<'a> {
    pub backend: &'a dyn Backend,
    pub sandbox: &'a Sandbox,
    pub cost_table: &'a CostTable,
    pub retry: RetryPolicy,
    pub latency_mode: LatencyMode,
    /// Maximum concurrently evaluated queries within a stage.
    pub parallelism: usize,
    /// Cap on stored log events per query.
    pub per_query_log_cap: usize,
}

impl EvalContext<'_> {
    fn exec_env(&self) -> ExecutionEnv<'_> {
        ExecutionEnv {
            backend: self.backend,
            sandbox: self.sandbox,
            cost_table: self.cost_table,
            retry: self.retry,
            latency_mode: self.latency_mode,
        }
    }
}

fn evaluate_query(
    graph: &ValidatedWorkflow,
    task: &Task,
    index: usize,
    ctx: &EvalContext<'_>,
) -> Result<(QueryMetrics, QueryLog), EvalError> {
    let trace = execute_workflow(graph, &task.query, &ctx.exec_env())?;
    let score = match (&task.gold, trace.answer.as_text()) {
        (_, None) => 0.0,
        (Gold::Answer(gold), Some(answer)) => f64::from(score_math(answer, gold)),
        (Gold::Tests(tests), Some(program)) => {
            f64::from(score_code(program, tests, ctx.sandbox).map_err(EvalError::Scoring)?)
        }
    };
    let metrics = QueryMetrics {
        score,
        cost: trace.total_cost,
        latency: trace.total_latency,
    };
    let mut events = trace.log;
    events.truncate(ctx.per_query_log_cap);
    let log = QueryLog {
        task_id: task.id.clone(),
        index,
        failed: trace.failed || score == 0.0,
        score,
        events,
    };
    Ok((metrics, log))
}

/// Evaluate one stage, preserving dataset order in the results regardless
/// of scheduling. `offset` is the stage's starting index in the run order.
fn run_stage(
    graph: &ValidatedWorkflow,
    tasks: &[Task],
    offset: usize,
    ctx: &EvalContext<'_>,
) -> Result<Vec<(QueryMetrics, QueryLog)>, EvalError> {
    let workers = ctx.parallelism.max(1).min(tasks.len().max(1));
    if workers <= 1 {
        return tasks
            .iter()
            .enumerate()
            .map(|(i, task)| evaluate_query(graph, task, offset + i, ctx))
            .collect();
    }

    let results: Vec<Mutex<Option<(QueryMetrics, QueryLog)>>> =
        tasks.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let fault: Mutex<Option<EvalError>> = Mutex::new(None);
    let stop = AtomicBool::new(false);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= tasks.len() {
                    break;
                }
                match evaluate_query(graph, &tasks[i], offset + i, ctx) {
                    Ok(outcome) => {
                        *results[i].lock().expect("result slot poisoned") = Some(outcome);
                    }
                    Err(e) => {
                        stop.store(true, Ordering::SeqCst);
                        let mut slot = fault.lock().expect("fault slot poisoned");
                        if slot.is_none() {
                            *slot = Some(e);
                        }
                        break;
                    }
                }
            });
        }
    });

    if let Some(e) = fault.into_inner().expect("fault slot poisoned") {
        return Err(e);
    }
    Ok(results
        .into_iter()
        .map(|slot| {
            slot.into_inner()
                .expect("slot poisoned")
                .expect("all slots filled")
        })
        .collect())
}

fn failures_first(mut logs: Vec<QueryLog>) -> Vec<QueryLog> {
    logs.sort_by_key(|l| (!l.failed, l.index));
    logs
}

/// The cascaded evaluation protocol. The gate threshold is derived by the
/// caller with [`effective_gamma`] (or disabled, for the seed). Engine
/// faults (an unusable sandbox) abort with an error; per-query failures
/// are data.
pub fn cascaded_eval(
    graph: &ValidatedWorkflow,
    dataset: &[Task],
    weights: &RewardWeights,
    ctx: &EvalContext<'_>,
    gate: GatePolicy,
) -> Result<EvalOutcome, EvalError> {
    if dataset.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let (stage1_len, _) = stage_sizes(dataset.len());

    let stage1 = run_stage(graph, &dataset[..stage1_len], 0, ctx)?;
    let mut metrics: Vec<QueryMetrics> = stage1.iter().map(|(m, _)| *m).collect();
    let mut logs: Vec<QueryLog> = stage1.into_iter().map(|(_, l)| l).collect();
    let stage1_reward = aggregate_reward(&metrics, weights).map_err(EvalError::Scoring)?;

    if let GatePolicy::Threshold(gamma) = gate {
        if stage1_reward <= gamma {
            return Ok(EvalOutcome {
                status: EvalStatus::ScreenedOut,
                stage1_reward: Some(stage1_reward),
                final_reward: None,
                metrics,
                logs: failures_first(logs),
                queries_executed: stage1_len as u64,
            });
        }
    }

    let stage2 = run_stage(graph, &dataset[stage1_len..], stage1_len, ctx)?;
    metrics.extend(stage2.iter().map(|(m, _)| *m));
    logs.extend(stage2.into_iter().map(|(_, l)| l));
    let final_reward = aggregate_reward(&metrics, weights).map_err(EvalError::Scoring)?;

    Ok(EvalOutcome {
        status: EvalStatus::Completed,
        stage1_reward: Some(stage1_reward),
        final_reward: Some(final_reward),
        metrics,
        logs: failures_first(logs),
        queries_executed: dataset.len() as u64,
    })
}
