//! The evolution driver: initialization, the iteration loop, checkpoints,
//! and reporting.
//!
//! One iteration: pick an island uniformly at random, sample a parent and
//! the reference pair, run reflect-then-generate, evaluate the candidate
//! through the cascaded gate, and fold valid outcomes into the island
//! archive, the histories, and the best-so-far record. Ring migration
//! fires every `migration_interval` iterations. Invalid candidates consume
//! an iteration: synthesis failures are a budgeted part of the search.

mod checkpoint;
mod dataset;
mod report;
mod rng;

pub use checkpoint::{checkpoint, resume, CHECKPOINT_VERSION};
pub use dataset::{load_dataset, write_dataset};
pub use report::{render_report, RunReport};
pub use rng::RngStreams;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{
    Backend, CostTable, LiveBackend, LiveConfig, ReplayBackend, RetryPolicy, ScriptedBackend,
    ScriptedRule,
};
use crate::cascade::{
    cascaded_eval, effective_gamma, EvalContext, EvalError, EvalOutcome, EvalStatus, GatePolicy,
    SplitConfig,
};
use crate::exec::LatencyMode;
use crate::exec::{LogEvent, Sandbox};
use crate::ir::seed_workflow;
use crate::meta::{synthesize, EvolutionContext, SynthesisOptions, SystemInstruction};
use crate::population::{
    best_overall, ring_migrate, sample_parent, select_references, CandidateRecord, GridConfig,
    IslandState, Lineage, MetricsSummary, MigrationMove, SamplerConfig,
};
use crate::scoring::{QueryMetrics, RewardWeights, Task};

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("config error: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint version mismatch: found '{found}', expected '{expected}'")]
    CheckpointVersion { found: String, expected: String },
    #[error("backend error: {0}")]
    Backend(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Backend selection for one role (task nodes or the meta-agent).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Scripted {
        #[serde(default)]
        rules: Vec<ScriptedRule>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rules_file: Option<PathBuf>,
    },
    Replay {
        dir: PathBuf,
    },
    Live {
        #[serde(flatten)]
        config: LiveConfig,
    },
}

impl BackendConfig {
    pub fn build(&self) -> Result<Box<dyn Backend>, DriverError> {
        match self {
            BackendConfig::Scripted { rules, rules_file } => {
                let mut all = Vec::new();
                if let Some(path) = rules_file {
                    let body = std::fs::read_to_string(path).map_err(|e| {
                        DriverError::Config(format!(
                            "cannot read rules file {}: {e}",
                            path.display()
                        ))
                    })?;
                    let from_file: Vec<ScriptedRule> =
                        serde_json::from_str(&body).map_err(|e| {
                            DriverError::Config(format!("bad rules file {}: {e}", path.display()))
                        })?;
                    all.extend(from_file);
                }
                all.extend(rules.iter().cloned());
                Ok(Box::new(ScriptedBackend::new(all)))
            }
            BackendConfig::Replay { dir } => Ok(Box::new(ReplayBackend::new(dir.clone()))),
            BackendConfig::Live { config } => Ok(Box::new(
                LiveBackend::new(config.clone())
                    .map_err(|e| DriverError::Backend(e.to_string()))?,
            )),
        }
    }
}

/// Ablation switches exposed by the engine.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    /// Skip the reflection stage of synthesis.
    #[serde(default)]
    pub disable_reflection: bool,
    /// Greedy baseline: the parent and both references are always the
    /// best-so-far record. Requires a single island.
    #[serde(default)]
    pub single_island_greedy: bool,
}

fn default_islands() -> usize {
    2
}
fn default_iterations() -> u64 {
    40
}
fn default_migration_interval() -> u64 {
    15
}
fn default_elite_count() -> usize {
    2
}
fn default_temperature() -> f64 {
    1.0
}
fn default_parallelism() -> usize {
    4
}
fn default_log_budget() -> usize {
    8 * 1024
}
fn default_per_query_log_cap() -> usize {
    64
}
fn default_seed_instruction() -> String {
    "Solve the following problem. Respond with only the final answer.\n\n{query}".to_string()
}

/// Full run configuration. The serde defaults are the standard preset:
/// K=2 islands, 40 iterations, migration every 15, rho=(0.3, 0.5),
/// lambda=(0.9, 0.05, 0.05), alpha_cost=5, alpha_time=1/60.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_islands")]
    pub islands: usize,
    #[serde(default = "default_iterations")]
    pub iterations: u64,
    #[serde(default = "default_migration_interval")]
    pub migration_interval: u64,
    #[serde(default = "default_elite_count")]
    pub elite_count: usize,
    pub dataset: PathBuf,
    pub output_dir: PathBuf,
    /// Backbone model id used by the seed workflow's LLM node.
    pub task_model: String,
    pub meta_model: String,
    #[serde(default = "default_temperature")]
    pub task_temperature: f64,
    #[serde(default = "default_temperature")]
    pub meta_temperature: f64,
    #[serde(default = "default_seed_instruction")]
    pub seed_instruction: String,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub weights: RewardWeights,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub gate: SplitConfig,
    #[serde(default)]
    pub sandbox: Sandbox,
    #[serde(default)]
    pub cost_table: CostTable,
    pub task_backend: BackendConfig,
    pub meta_backend: BackendConfig,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub latency_mode: LatencyMode,
    #[serde(default = "default_log_budget")]
    pub log_budget: usize,
    #[serde(default = "default_per_query_log_cap")]
    pub per_query_log_cap: usize,
    #[serde(default)]
    pub ablation: AblationConfig,
    /// Write a checkpoint every N iterations; 0 disables periodic ones.
    #[serde(default)]
    pub checkpoint_every: u64,
}

impl RunConfig {
    /// The standard preset with scripted backends, suitable as a template.
    pub fn standard(dataset: PathBuf, output_dir: PathBuf) -> Self {
        RunConfig {
            seed: 42,
            islands: default_islands(),
            iterations: default_iterations(),
            migration_interval: default_migration_interval(),
            elite_count: default_elite_count(),
            dataset,
            output_dir,
            task_model: "task-model".into(),
            meta_model: "meta-model".into(),
            task_temperature: default_temperature(),
            meta_temperature: default_temperature(),
            seed_instruction: default_seed_instruction(),
            sampler: SamplerConfig::default(),
            weights: RewardWeights::default(),
            grid: GridConfig::default(),
            gate: SplitConfig::default(),
            sandbox: Sandbox::default(),
            cost_table: CostTable::new(),
            task_backend: BackendConfig::Scripted {
                rules: Vec::new(),
                rules_file: None,
            },
            meta_backend: BackendConfig::Scripted {
                rules: Vec::new(),
                rules_file: None,
            },
            retry: RetryPolicy::default(),
            parallelism: default_parallelism(),
            latency_mode: LatencyMode::default(),
            log_budget: default_log_budget(),
            per_query_log_cap: default_per_query_log_cap(),
            ablation: AblationConfig::default(),
            checkpoint_every: 0,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, DriverError> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| DriverError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), DriverError> {
        let err = |m: String| Err(DriverError::Config(m));
        if self.islands < 1 {
            return err("islands must be >= 1".into());
        }
        if self.iterations < 1 {
            return err("iterations must be >= 1".into());
        }
        if self.migration_interval < 1 {
            return err("migration_interval must be >= 1".into());
        }
        if self.parallelism < 1 {
            return err("parallelism must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.task_temperature)
            || !(0.0..=1.0).contains(&self.meta_temperature)
        {
            return err("temperatures must lie in [0, 1]".into());
        }
        if self.ablation.single_island_greedy && self.islands != 1 {
            return err("single_island_greedy requires islands = 1".into());
        }
        self.sampler.validate().map_err(DriverError::Config)?;
        self.weights.validate().map_err(DriverError::Config)?;
        self.grid.validate().map_err(DriverError::Config)?;
        self.gate.validate().map_err(DriverError::Config)?;
        self.sandbox
            .limits
            .validate()
            .map_err(DriverError::Config)?;
        self.cost_table.validate().map_err(DriverError::Config)?;
        Ok(())
    }
}

/// What one iteration did.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Seed,
    Completed,
    Screened,
    Invalid,
}

/// One line of the convergence table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub t: u64,
    pub island: usize,
    pub status: RowStatus,
    /// Final reward for completed candidates.
    pub reward: Option<f64>,
    pub stage1_reward: Option<f64>,
    pub best_so_far: f64,
    pub queries_executed: u64,
    /// Cumulative meta-agent token spend (prompt + completion).
    pub meta_tokens_total: u64,
    pub fingerprint: Option<String>,
    pub rejection: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MigrationEvent {
    pub t: u64,
    pub moves: Vec<MigrationMove>,
}

/// The resumable loop state of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    /// Completed iterations.
    pub t: u64,
    pub islands: Vec<IslandState>,
    pub global_history: Vec<CandidateRecord>,
    pub best: CandidateRecord,
    pub seed_reward: f64,
    pub rng: RngStreams,
    pub invalid_candidates: u64,
    pub meta_prompt_tokens: u64,
    pub meta_completion_tokens: u64,
    /// Task ids in the run's fixed (shuffled) evaluation order.
    pub dataset_order: Vec<String>,
    pub rows: Vec<IterationRow>,
    pub migrations: Vec<MigrationEvent>,
}

impl RunState {
    pub fn meta_tokens_total(&self) -> u64 {
        self.meta_prompt_tokens + self.meta_completion_tokens
    }

    /// Verify the incremental best against a full scan of the pool.
    pub fn recompute_best(&self) -> Option<&CandidateRecord> {
        best_overall(&self.global_history)
    }
}

/// Runtime companions of a `RunState`: built from config, never persisted.
pub struct RunEnv {
    pub task_backend: Box<dyn Backend>,
    pub meta_backend: Box<dyn Backend>,
    /// Tasks in the run's fixed evaluation order.
    pub dataset: Vec<Task>,
    pub sys: SystemInstruction,
}

impl RunEnv {
    /// Build for a fresh run: dataset stays in file order until
    /// `initialize` shuffles it.
    pub fn build(config: &RunConfig) -> Result<Self, DriverError> {
        Ok(RunEnv {
            task_backend: config.task_backend.build()?,
            meta_backend: config.meta_backend.build()?,
            dataset: load_dataset(&config.dataset)?,
            sys: SystemInstruction::default(),
        })
    }

    /// Build for a resumed run: reorder the dataset to the state's fixed
    /// order and verify it still matches the file.
    pub fn build_for_state(config: &RunConfig, state: &RunState) -> Result<Self, DriverError> {
        let mut env = RunEnv::build(config)?;
        let mut by_id: std::collections::BTreeMap<String, Task> =
            env.dataset.drain(..).map(|t| (t.id.clone(), t)).collect();
        let mut ordered = Vec::with_capacity(state.dataset_order.len());
        for id in &state.dataset_order {
            let task = by_id.remove(id).ok_or_else(|| {
                DriverError::Dataset(format!(
                    "dataset no longer contains task id '{id}' from the checkpoint"
                ))
            })?;
            ordered.push(task);
        }
        if !by_id.is_empty() {
            return Err(DriverError::Dataset(format!(
                "dataset gained {} task(s) not present at checkpoint time",
                by_id.len()
            )));
        }
        env.dataset = ordered;
        Ok(env)
    }

    fn eval_ctx<'a>(&'a self, config: &'a RunConfig) -> EvalContext<'a> {
        EvalContext {
            backend: self.task_backend.as_ref(),
            sandbox: &config.sandbox,
            cost_table: &config.cost_table,
            retry: config.retry,
            latency_mode: config.latency_mode,
            parallelism: config.parallelism,
            per_query_log_cap: config.per_query_log_cap,
        }
    }
}

fn metrics_summary(metrics: &[QueryMetrics]) -> MetricsSummary {
    let n = metrics.len().max(1) as f64;
    MetricsSummary {
        mean_score: metrics.iter().map(|m| m.score).sum::<f64>() / n,
        mean_cost: metrics.iter().map(|m| m.cost).sum::<f64>() / n,
        mean_latency: metrics.iter().map(|m| m.latency).sum::<f64>() / n,
    }
}

/// Render an outcome's logs (already failures-first) into the bounded text
/// excerpt stored on the candidate record.
fn render_log_excerpt(outcome: &EvalOutcome, budget: usize) -> String {
    let mut out = String::new();
    'outer: for log in &outcome.logs {
        let header = format!(
            "[{} {} score={}]\n",
            log.task_id,
            if log.failed { "FAILED" } else { "ok" },
            log.score
        );
        if out.len() + header.len() > budget {
            break;
        }
        out.push_str(&header);
        if log.failed {
            for event in &log.events {
                let line = match event {
                    LogEvent::NodeFailed {
                        node,
                        kind,
                        message,
                        stderr,
                    } => {
                        let stderr_tail: String = stderr
                            .chars()
                            .rev()
                            .take(200)
                            .collect::<Vec<_>>()
                            .into_iter()
                            .rev()
                            .collect();
                        Some(format!("  node={node} failed kind={kind:?} message={message} stderr={stderr_tail:?}\n"))
                    }
                    LogEvent::NodeSkipped { node, binding } => Some(format!(
                        "  node={node} skipped: no alternative delivered binding '{binding}'\n"
                    )),
                    LogEvent::GuardError {
                        from,
                        to,
                        label,
                        message,
                    } => Some(format!(
                        "  guard error on {from}->{to} '{label}': {message}\n"
                    )),
                    _ => None,
                };
                if let Some(line) = line {
                    if out.len() + line.len() > budget {
                        break 'outer;
                    }
                    out.push_str(&line);
                }
            }
        }
    }
    out
}

/// Seed the run: build and fully evaluate the one-node seed workflow (the
/// gate is disabled for it; the initial reward must be grounded), then
/// populate every island archive/history and the global history with it.
pub fn initialize(config: &RunConfig, env: &mut RunEnv) -> Result<RunState, DriverError> {
    config.validate()?;

    let mut rng = RngStreams::new(config.seed);
    env.dataset.shuffle(&mut rng.shuffle);
    let dataset_order: Vec<String> = env.dataset.iter().map(|t| t.id.clone()).collect();

    let seed_graph = seed_workflow(
        &config.task_model,
        &config.seed_instruction,
        config.task_temperature,
    );
    let outcome = cascaded_eval(
        &seed_graph,
        &env.dataset,
        &config.weights,
        &env.eval_ctx(config),
        GatePolicy::Disabled,
    )?;
    debug_assert_eq!(outcome.status, EvalStatus::Completed);
    let seed_reward = outcome
        .final_reward
        .expect("ungated evaluation always completes");

    let record = CandidateRecord::new(
        seed_graph,
        seed_reward,
        metrics_summary(&outcome.metrics),
        render_log_excerpt(&outcome, config.log_budget),
        Lineage {
            parent_fingerprint: None,
            iteration: 0,
        },
    );

    let mut islands = Vec::with_capacity(config.islands);
    for k in 1..=config.islands {
        let mut island = IslandState::new(k);
        island.archive_update(record.clone(), &config.grid);
        islands.push(island);
    }

    let rows = vec![IterationRow {
        t: 0,
        island: 0,
        status: RowStatus::Seed,
        reward: Some(seed_reward),
        stage1_reward: outcome.stage1_reward,
        best_so_far: seed_reward,
        queries_executed: outcome.queries_executed,
        meta_tokens_total: 0,
        fingerprint: Some(record.fingerprint.clone()),
        rejection: None,
    }];

    Ok(RunState {
        t: 0,
        islands,
        global_history: vec![record.clone()],
        best: record,
        seed_reward,
        rng,
        invalid_candidates: 0,
        meta_prompt_tokens: 0,
        meta_completion_tokens: 0,
        dataset_order,
        rows,
        migrations: Vec::new(),
    })
}

/// Advance the loop until `stop_at` (or the configured iteration budget).
/// On an engine-level fault the state is checkpointed before the error
/// propagates.
pub fn run_evolution(
    state: &mut RunState,
    env: &RunEnv,
    config: &RunConfig,
    stop_at: Option<u64>,
) -> Result<(), DriverError> {
    let until = stop_at.unwrap_or(config.iterations).min(config.iterations);

    while state.t < until {
        let t = state.t + 1;
        let island_idx = state.rng.island.gen_range(0..config.islands);

        let (parent, top, diverse) = if config.ablation.single_island_greedy {
            (state.best.clone(), state.best.clone(), state.best.clone())
        } else {
            let island = &state.islands[island_idx];
            let (parent, _) = sample_parent(
                island,
                &state.global_history,
                &config.sampler,
                &mut state.rng.parent,
            );
            let parent = parent.clone();
            let (top, diverse) = select_references(island, &mut state.rng.reference);
            (parent, top.clone(), diverse.clone())
        };
        let parent_fingerprint = parent.fingerprint.clone();

        let ctx = EvolutionContext {
            parent,
            top,
            diverse,
            iteration: t,
        };
        let opts = SynthesisOptions {
            model: config.meta_model.clone(),
            temperature: config.meta_temperature,
            retry: config.retry,
            log_budget: config.log_budget,
            disable_reflection: config.ablation.disable_reflection,
        };
        let synthesis = synthesize(&ctx, &env.sys, env.meta_backend.as_ref(), &opts);
        state.meta_prompt_tokens += synthesis.prompt_tokens;
        state.meta_completion_tokens += synthesis.completion_tokens;

        let row = match synthesis.candidate {
            Err(reason) => {
                state.invalid_candidates += 1;
                IterationRow {
                    t,
                    island: state.islands[island_idx].id,
                    status: RowStatus::Invalid,
                    reward: None,
                    stage1_reward: None,
                    best_so_far: state.best.reward,
                    queries_executed: 0,
                    meta_tokens_total: state.meta_tokens_total(),
                    fingerprint: None,
                    rejection: Some(reason.to_string()),
                }
            }
            Ok(graph) => {
                let gamma = effective_gamma(&config.gate, state.best.reward);
                let outcome = match cascaded_eval(
                    &graph,
                    &env.dataset,
                    &config.weights,
                    &env.eval_ctx(config),
                    GatePolicy::Threshold(gamma),
                ) {
                    Ok(outcome) => outcome,
                    Err(fault) => {
                        // Preserve progress before aborting the run.
                        let _ =
                            checkpoint(state, config, &config.output_dir.join("abort.ckpt.json"));
                        return Err(fault.into());
                    }
                };

                match outcome.status {
                    EvalStatus::ScreenedOut => IterationRow {
                        t,
                        island: state.islands[island_idx].id,
                        status: RowStatus::Screened,
                        reward: None,
                        stage1_reward: outcome.stage1_reward,
                        best_so_far: state.best.reward,
                        queries_executed: outcome.queries_executed,
                        meta_tokens_total: state.meta_tokens_total(),
                        fingerprint: Some(graph.fingerprint()),
                        rejection: None,
                    },
                    EvalStatus::Completed => {
                        let reward = outcome
                            .final_reward
                            .expect("completed outcomes carry a reward");
                        let record = CandidateRecord::new(
                            graph,
                            reward,
                            metrics_summary(&outcome.metrics),
                            render_log_excerpt(&outcome, config.log_budget),
                            Lineage {
                                parent_fingerprint: Some(parent_fingerprint),
                                iteration: t,
                            },
                        );
                        state.islands[island_idx].archive_update(record.clone(), &config.grid);
                        state.global_history.push(record.clone());
                        if record.reward > state.best.reward {
                            state.best = record.clone();
                        }
                        IterationRow {
                            t,
                            island: state.islands[island_idx].id,
                            status: RowStatus::Completed,
                            reward: Some(reward),
                            stage1_reward: outcome.stage1_reward,
                            best_so_far: state.best.reward,
                            queries_executed: outcome.queries_executed,
                            meta_tokens_total: state.meta_tokens_total(),
                            fingerprint: Some(record.fingerprint.clone()),
                            rejection: None,
                        }
                    }
                    EvalStatus::Invalid => unreachable!("cascaded_eval never returns Invalid"),
                }
            }
        };
        state.rows.push(row);
        state.t = t;

        if t.is_multiple_of(config.migration_interval) {
            let moves = ring_migrate(&mut state.islands, config.elite_count, &config.grid);
            state.migrations.push(MigrationEvent { t, moves });
        }

        if config.checkpoint_every > 0 && t.is_multiple_of(config.checkpoint_every) {
            checkpoint(
                state,
                config,
                &config.output_dir.join(format!("checkpoint_t{t}.json")),
            )?;
        }
    }
    Ok(())
}

/// Run a frozen workflow over a dataset with the gate disabled: the
/// `evaluate` CLI path, kept apart from evolution.
pub fn evaluate_frozen(
    graph: &crate::ir::ValidatedWorkflow,
    dataset: &[Task],
    config: &RunConfig,
    env: &RunEnv,
) -> Result<EvalOutcome, DriverError> {
    Ok(cascaded_eval(
        graph,
        dataset,
        &config.weights,
        &env.eval_ctx(config),
        GatePolicy::Disabled,
    )?)
}

/// Convenience wrapper for single-query debugging (`exec` CLI path).
pub fn exec_single(
    graph: &crate::ir::ValidatedWorkflow,
    query: &str,
    config: &RunConfig,
    env: &RunEnv,
) -> Result<crate::exec::ExecutionTrace, DriverError> {
    let ctx = env.eval_ctx(config);
    let exec_env = crate::exec::ExecutionEnv {
        backend: ctx.backend,
        sandbox: ctx.sandbox,
        cost_table: ctx.cost_table,
        retry: ctx.retry,
        latency_mode: ctx.latency_mode,
    };
    Ok(crate::exec::execute_workflow(graph, query, &exec_env).map_err(EvalError::from)?)
}

/// Write the report files into `dir`: convergence and landscape tables,
/// the lineage of the best record, a JSON summary, and the best workflow
/// document itself.
pub fn write_report(
    state: &RunState,
    config: &RunConfig,
    dir: &Path,
) -> Result<RunReport, DriverError> {
    let report = render_report(state, config);
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("convergence.csv"), &report.convergence_csv)?;
    std::fs::write(dir.join("landscape.csv"), &report.landscape_csv)?;
    std::fs::write(dir.join("lineage.csv"), &report.lineage_csv)?;
    std::fs::write(dir.join("summary.json"), &report.summary_json)?;
    std::fs::write(dir.join("best_workflow.json"), &report.best_workflow_doc)?;
    Ok(report)
}
