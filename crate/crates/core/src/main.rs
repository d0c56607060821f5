//! Command-line interface for the workflow evolution engine.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use dagevo::driver::{
    checkpoint, evaluate_frozen, exec_single, initialize, resume, run_evolution, write_report,
    RunConfig, RunEnv,
};
use dagevo::ir;

#[derive(Parser)]
#[command(
    name = "dagevo",
    version,
    about = "Evolutionary engine for heterogeneous agentic workflows"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the evolution loop from a config file (optionally resuming).
    Evolve {
        #[arg(long)]
        config: PathBuf,
        /// Resume from a checkpoint written by a previous run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a frozen workflow document against a dataset.
    Evaluate {
        #[arg(long)]
        workflow: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Execute a workflow on a single query and print the trace.
    Exec {
        #[arg(long)]
        workflow: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(long)]
        config: PathBuf,
    },
    /// Regenerate report files from a checkpoint.
    Report {
        #[arg(long)]
        state: PathBuf,
        /// Output directory; defaults to the run's configured one.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: &PathBuf) -> Result<RunConfig> {
    let body = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    Ok(RunConfig::from_toml(&body)?)
}

fn load_workflow(path: &PathBuf) -> Result<ir::ValidatedWorkflow> {
    let body = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read workflow {}", path.display()))?;
    let graph = ir::deserialize(&body)?;
    match graph.into_validated() {
        Ok(validated) => Ok(validated),
        Err(report) => bail!("workflow {} is invalid: {report}", path.display()),
    }
}

fn cmd_evolve(config_path: PathBuf, resume_from: Option<PathBuf>) -> Result<()> {
    let (config, mut state, env) = match resume_from {
        Some(ckpt) => {
            // The embedded config wins on resume: it is the one the
            // trajectory depends on.
            let (config, state) = resume(&ckpt)?;
            let env = RunEnv::build_for_state(&config, &state)?;
            eprintln!("resumed at t={} from {}", state.t, ckpt.display());
            (config, state, env)
        }
        None => {
            let config = load_config(&config_path)?;
            let mut env = RunEnv::build(&config)?;
            let state = initialize(&config, &mut env)?;
            eprintln!("initialized: seed reward {}", state.seed_reward);
            (config, state, env)
        }
    };

    run_evolution(&mut state, &env, &config, None)?;

    std::fs::create_dir_all(&config.output_dir)?;
    let ckpt_path = config.output_dir.join("checkpoint.json");
    checkpoint(&state, &config, &ckpt_path)?;
    let report = write_report(&state, &config, &config.output_dir)?;

    eprintln!(
        "finished t={} | best reward {} (node_count {}, llm_proportion {}) | invalid {} | meta tokens {}",
        state.t,
        state.best.reward,
        state.best.descriptor.node_count,
        state.best.descriptor.llm_proportion,
        state.invalid_candidates,
        state.meta_tokens_total(),
    );
    eprintln!("checkpoint: {}", ckpt_path.display());
    eprintln!("reports: {}", config.output_dir.display());
    print!("{}", report.summary_json);
    Ok(())
}

fn cmd_evaluate(workflow: PathBuf, dataset: PathBuf, config_path: PathBuf) -> Result<()> {
    let mut config = load_config(&config_path)?;
    config.dataset = dataset;
    let graph = load_workflow(&workflow)?;
    let env = RunEnv::build(&config)?;
    let outcome = evaluate_frozen(&graph, &env.dataset, &config, &env)?;

    println!("id,score,cost,latency");
    for (task, m) in env.dataset.iter().zip(outcome.metrics.iter()) {
        println!("{},{},{},{}", task.id, m.score, m.cost, m.latency);
    }
    let n = outcome.metrics.len() as f64;
    let mean_score: f64 = outcome.metrics.iter().map(|m| m.score).sum::<f64>() / n;
    eprintln!(
        "queries {} | mean score {} | reward {}",
        outcome.queries_executed,
        mean_score,
        outcome.final_reward.unwrap_or(f64::NAN),
    );
    Ok(())
}

fn cmd_exec(workflow: PathBuf, query: String, config_path: PathBuf) -> Result<()> {
    let config = load_config(&config_path)?;
    let graph = load_workflow(&workflow)?;
    // exec needs no dataset; point the env loader at nothing.
    let env = RunEnv {
        task_backend: config.task_backend.build()?,
        meta_backend: config.meta_backend.build()?,
        dataset: Vec::new(),
        sys: Default::default(),
    };
    let trace = exec_single(&graph, &query, &config, &env)?;

    for event in &trace.log {
        eprintln!("{}", serde_json::to_string(event)?);
    }
    eprintln!(
        "cost ${} | latency {}s | failed {}",
        trace.total_cost, trace.total_latency, trace.failed
    );
    match trace.answer.as_text() {
        Some(answer) => println!("{answer}"),
        None => {
            println!("ABSENT");
            std::process::exit(2);
        }
    }
    Ok(())
}

fn cmd_report(state_path: PathBuf, out: Option<PathBuf>) -> Result<()> {
    let (config, state) = resume(&state_path)?;
    let dir = out.unwrap_or_else(|| config.output_dir.clone());
    write_report(&state, &config, &dir)?;
    eprintln!("reports written to {}", dir.display());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Evolve { config, resume } => cmd_evolve(config, resume),
        Command::Evaluate {
            workflow,
            dataset,
            config,
        } => cmd_evaluate(workflow, dataset, config),
        Command::Exec {
            workflow,
            query,
            config,
        } => cmd_exec(workflow, query, config),
        Command::Report { state, out } => cmd_report(state, out),
    }
}
