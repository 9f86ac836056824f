use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use skill_lifecycle::evolution::{read_units, run_evolution_batch, EvolutionOptions, EvolvableUnit};
use skill_lifecycle::gateway::{CommandExecutor, Executor, Gateway, ScriptedExecutor};
use skill_lifecycle::lifecycle::simulate::{attribute_one, evolve_simply, recommend_first, ScriptedEnvironment};
use skill_lifecycle::lifecycle::{
    load_run_outcomes, merge_outcomes, read_tasks, report_metrics, run_experiment, Backends, CommandEnvironment,
    ExperimentConfig, Outcomes, TrialEnvironment,
};
use skill_lifecycle::profile::{profile_corpus, write_ndjson, Discovery, Judges};
use skill_lifecycle::recommend::{recommend_for_task, RecommendationRequest};
use skill_lifecycle::store::{BatchTimestamp, SkillLibrary, SystemClock};

/// Profile, recommend, attribute, and evolve directory-based agent skills.
#[derive(Parser)]
#[command(name = "skillctl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Profile every skill package under a corpus root as JSON Lines.
    Profile(ProfileArgs),
    /// Select skills for one task and install them into a directory.
    Recommend(RecommendArgs),
    /// Run a task stream under an experiment config.
    Run(RunArgs),
    /// Evolve a library from a file of queued units.
    Evolve(EvolveArgs),
    /// Compute avg@k for run directories, optionally against a baseline.
    Report(ReportArgs),
}

#[derive(Args)]
struct AgentArgs {
    /// Agent command line; see the executor protocol in the guide.
    #[arg(long, value_name = "CMD", required_unless_present = "simulate")]
    agent_cmd: Option<String>,
    /// Use the built-in simulated agents instead of a real one.
    #[arg(long, conflicts_with = "agent_cmd")]
    simulate: bool,
}

#[derive(Args)]
struct ProfileArgs {
    root: PathBuf,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Find packages at any depth instead of immediate subdirectories only.
    #[arg(long)]
    recursive: bool,
    /// Timestamp stamped on every record (RFC 3339). Defaults to now.
    #[arg(long, value_name = "TIME")]
    profiled_at: Option<DateTime<Utc>>,
    /// Also write per-directory failures as JSON Lines.
    #[arg(long, value_name = "FILE")]
    failures: Option<PathBuf>,
}

#[derive(Args)]
struct RecommendArgs {
    /// YAML or JSON file holding one task.
    task_file: PathBuf,
    #[arg(long, value_name = "ROOT")]
    skills: PathBuf,
    #[arg(long, value_name = "DIR")]
    dest: PathBuf,
    #[arg(long, default_value_t = skill_lifecycle::recommend::DEFAULT_TOP_K)]
    top_k: usize,
    /// Where to keep prompts, attempts, and the outcome.
    #[arg(long, value_name = "DIR")]
    artifacts: Option<PathBuf>,
    #[command(flatten)]
    agent: AgentArgs,
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    /// Ordered task list (YAML, JSON, or JSON Lines).
    #[arg(long)]
    tasks: PathBuf,
    #[arg(long, value_name = "DIR")]
    run_dir: PathBuf,
    #[command(flatten)]
    agent: AgentArgs,
    /// Solver command; receives the task through environment variables.
    #[arg(long, value_name = "CMD", required_unless_present = "simulate")]
    solver_cmd: Option<String>,
    /// Verifier command; its stdout is the verifier artifact.
    #[arg(long, value_name = "CMD", required_unless_present = "simulate")]
    verifier_cmd: Option<String>,
    /// Attempts per task; only the last is attributed.
    #[arg(long, default_value_t = 1)]
    max_attempts: u32,
    /// Per-command timeout for solver and verifier, in seconds.
    #[arg(long, value_name = "SECS")]
    trial_timeout: Option<u64>,
}

#[derive(Args)]
struct EvolveArgs {
    /// Queued units: JSON Lines, a JSON array, or an attribution subtasks.json.
    #[arg(long)]
    units: PathBuf,
    #[arg(long, value_name = "ROOT")]
    library: PathBuf,
    /// Batch directory for request workspaces. Defaults to `evolution/<timestamp>`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(flatten)]
    agent: AgentArgs,
}

#[derive(Args)]
struct ReportArgs {
    /// One or more run directories; outcomes are pooled per task.
    #[arg(required = true)]
    run_dirs: Vec<PathBuf>,
    #[arg(long, value_name = "RUN_DIR")]
    baseline: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(io::stderr)
        .init();
    match Cli::parse().command {
        Command::Profile(a) => profile(a),
        Command::Recommend(a) => recommend(a),
        Command::Run(a) => run(a),
        Command::Evolve(a) => evolve(a),
        Command::Report(a) => report(a),
    }
}

fn agent(args: &AgentArgs, simulated: ScriptedExecutor) -> Result<Box<dyn Executor>> {
    if args.simulate {
        return Ok(Box::new(simulated));
    }
    let line = args.agent_cmd.as_deref().unwrap_or_default();
    let exec = CommandExecutor::from_command_line(line).context("--agent-cmd is empty")?;
    Ok(Box::new(exec))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn print_json(value: &impl serde::Serialize, path: Option<&Path>) -> Result<()> {
    let mut out = output(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn profile(a: ProfileArgs) -> Result<()> {
    let discovery = if a.recursive { Discovery::Recursive } else { Discovery::Children };
    let at = a.profiled_at.unwrap_or_else(Utc::now);
    let corpus = profile_corpus(&a.root, discovery, &Judges::default(), at)
        .with_context(|| format!("profiling {}", a.root.display()))?;
    write_ndjson(&corpus.records, output(a.out.as_deref())?)?;
    if let Some(path) = &a.failures {
        write_ndjson(&corpus.failures, File::create(path)?)?;
    }
    for f in &corpus.failures {
        eprintln!("skipped {}: {}", f.dir.display(), f.error);
    }
    eprintln!("profiled {} packages, {} failed", corpus.records.len(), corpus.failures.len());
    Ok(())
}

fn recommend(a: RecommendArgs) -> Result<()> {
    let tasks = read_tasks(&a.task_file)?;
    let [task] = tasks.as_slice() else {
        bail!("{} holds {} tasks; recommend takes exactly one", a.task_file.display(), tasks.len());
    };
    let library = SkillLibrary::open(&a.skills, false)?;
    let exec = agent(&a.agent, ScriptedExecutor::from_fn(recommend_first(a.top_k)))?;
    let mut req = RecommendationRequest::new(&task.instruction, &library, &a.dest);
    req.top_k = a.top_k;
    req.artifact_dir = a.artifacts.clone();
    let outcome = recommend_for_task(&req, exec.as_ref(), &Gateway::default());
    print_json(&outcome, None)
}

fn run(a: RunArgs) -> Result<()> {
    let config = ExperimentConfig::load(&a.config)?;
    let tasks = read_tasks(&a.tasks)?;
    let recommender = agent(&a.agent, ScriptedExecutor::from_fn(recommend_first(config.top_k)))?;
    let attributor = agent(&a.agent, ScriptedExecutor::from_fn(attribute_one()))?;
    let evolver = agent(&a.agent, ScriptedExecutor::from_fn(evolve_simply()))?;
    let environment: Box<dyn TrialEnvironment> = if a.agent.simulate {
        Box::new(ScriptedEnvironment::constant_reward(1.0).with_attempts(a.max_attempts))
    } else {
        let solver = a.solver_cmd.as_deref().unwrap_or_default();
        let verifier = a.verifier_cmd.as_deref().unwrap_or_default();
        let mut env = CommandEnvironment::new(solver, verifier).context("solver and verifier commands must be non-empty")?;
        env.max_attempts = a.max_attempts.max(1);
        if let Some(secs) = a.trial_timeout {
            env.timeout = std::time::Duration::from_secs(secs);
        }
        Box::new(env)
    };
    let backends = Backends {
        recommender: recommender.as_ref(),
        attributor: attributor.as_ref(),
        evolver: evolver.as_ref(),
        environment: environment.as_ref(),
    };
    let outcome = run_experiment(&tasks, &config, backends, &a.run_dir, &SystemClock)?;
    print_json(&outcome.summary, None)?;
    eprintln!(
        "avg@{} = {:.1}% over {} tasks",
        outcome.metrics.k,
        outcome.metrics.avg_at_k * 100.0,
        outcome.metrics.per_task_scores.len()
    );
    Ok(())
}

fn evolve(a: EvolveArgs) -> Result<()> {
    let queued = read_units(&a.units)?;
    let mut library = SkillLibrary::open(&a.library, true)?;
    let units: Vec<EvolvableUnit> = queued
        .into_iter()
        .map(|u| EvolvableUnit::assess(u.trial_id, u.subtask, &library))
        .collect();
    let ts = BatchTimestamp::now();
    let batch_dir = a.out.clone().unwrap_or_else(|| PathBuf::from("evolution").join(ts.as_str()));
    let exec = agent(&a.agent, ScriptedExecutor::from_fn(evolve_simply()))?;
    let report = run_evolution_batch(
        &units,
        &mut library,
        &ts,
        &batch_dir,
        exec.as_ref(),
        &Gateway::default(),
        &EvolutionOptions::default(),
    )?;
    print_json(&report, None)?;
    eprintln!(
        "{} of {} units admissible; edited {:?}, created {:?}",
        report.units_admissible, report.units_total, report.edited, report.created
    );
    Ok(())
}

fn pooled(dirs: &[PathBuf]) -> Result<Outcomes> {
    let parts = dirs
        .iter()
        .map(|d| load_run_outcomes(d).with_context(|| format!("reading {}", d.display())))
        .collect::<Result<Vec<_>>>()?;
    Ok(merge_outcomes(&parts))
}

fn report(a: ReportArgs) -> Result<()> {
    let outcomes = pooled(&a.run_dirs)?;
    let baseline = if a.baseline.is_empty() {
        None
    } else {
        let name = a.baseline.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",");
        Some((name, report_metrics(&pooled(&a.baseline)?, None)?))
    };
    let metrics = report_metrics(&outcomes, baseline.as_ref().map(|(n, r)| (n.as_str(), r)))?;
    print_json(&metrics, a.out.as_deref())?;
    match metrics.delta_pp {
        Some(d) => eprintln!("avg@{} = {:.1}% ({d:+.1} pp)", metrics.k, metrics.avg_at_k * 100.0),
        None => eprintln!("avg@{} = {:.1}%", metrics.k, metrics.avg_at_k * 100.0),
    }
    Ok(())
}
