use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    evolution_due, finalize_trial, outcomes_from_trials, report_metrics, run_trial, Backends, ExperimentConfig,
    ExperimentMode, LifecycleError, MetricsReport, TrialContext, TrialRecord,
};
use crate::attribution::Subtask;
use crate::evolution::{run_evolution_batch, write_units, BatchReport, EvolutionOptions, EvolvableUnit, QueuedUnit};
use crate::fsutil::{copy_dir, remove_dir_if_exists, write_json};
use crate::gateway::Gateway;
use crate::profile::TaskSpec;
use crate::store::{Clock, SkillLibrary};

/// Units left queued at the end of a stream, written as JSON Lines.
pub const PENDING_UNITS_FILE: &str = "pending_units.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub mode: ExperimentMode,
    pub tasks: usize,
    pub trials: usize,
    pub final_trials: usize,
    pub recommendations: usize,
    pub attributions: usize,
    pub evolution_batches: Vec<String>,
    pub checkpoints: Vec<PathBuf>,
    pub final_library: Option<PathBuf>,
    /// Units still queued when the stream ended short of a full batch. They are
    /// saved to [`PENDING_UNITS_FILE`].
    pub unevolved_units: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub trials: Vec<TrialRecord>,
    pub metrics: MetricsReport,
    pub batches: Vec<BatchReport>,
    pub summary: ExperimentSummary,
}

fn slug(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

/// Copies only the packages (no backups or staging dirs).
fn snapshot_packages(lib: &SkillLibrary, dest: &Path) -> std::io::Result<()> {
    remove_dir_if_exists(dest)?;
    std::fs::create_dir_all(dest)?;
    for (name, pkg) in lib.packages() {
        copy_dir(&pkg.root, &dest.join(name))?;
    }
    Ok(())
}

fn open_libraries(config: &ExperimentConfig, run_dir: &Path) -> Result<Option<SkillLibrary>, LifecycleError> {
    Ok(match config.mode {
        ExperimentMode::Baseline => None,
        ExperimentMode::Online | ExperimentMode::OfflineBuild => {
            let root = config.runtime_library_root.as_ref().expect("validated");
            Some(if root.exists() {
                SkillLibrary::open(root, true)?
            } else {
                SkillLibrary::create(root)?
            })
        }
        ExperimentMode::OfflineTransfer => {
            let src = SkillLibrary::open(config.candidate_library_root.as_ref().expect("validated"), false)?;
            let frozen = run_dir.join("frozen_library");
            snapshot_packages(&src, &frozen)?;
            Some(SkillLibrary::open(frozen, false)?)
        }
    })
}

/// One task's attempts, run until the harness marks an attempt final.
/// A final-attempt subtask with the trial it came from.
type QueuedPair = (String, Subtask);

fn run_task(
    seq: usize,
    task: &TaskSpec,
    run_dir: &Path,
    ctx: &TrialContext<'_>,
) -> Result<(Vec<TrialRecord>, Vec<QueuedPair>), LifecycleError> {
    let mut records = Vec::new();
    let mut units = Vec::new();
    for attempt in 1.. {
        let trial_id = format!("{seq:04}-{}-a{attempt}", slug(&task.task_id));
        let trial_dir = run_dir.join("trials").join(&trial_id);
        let rec = run_trial(task, &trial_id, attempt, &trial_dir, ctx)?;
        let (rec, mut u) = finalize_trial(rec, &trial_dir, ctx);
        write_json(&trial_dir.join("trial.json"), &rec)?;
        let done = rec.is_final_attempt;
        records.push(rec);
        units.append(&mut u);
        if done {
            break;
        }
    }
    Ok((records, units))
}

/// Runs `tasks` in order under `config`, writing everything below `run_dir`.
///
/// Up to `trial_parallelism` tasks run at once. In evolving modes a wave never
/// crosses a batch boundary: when the count of finished final trials reaches a
/// multiple of the batch size, queued units are evolved into the library and a
/// checkpoint is written before the next task starts.
pub fn run_experiment(
    tasks: &[TaskSpec],
    config: &ExperimentConfig,
    backends: Backends<'_>,
    run_dir: &Path,
    clock: &dyn Clock,
) -> Result<ExperimentOutcome, LifecycleError> {
    config.validate()?;
    if tasks.is_empty() {
        return Err(LifecycleError::Config("task list is empty".into()));
    }
    std::fs::create_dir_all(run_dir)?;
    // Agents and solvers run in other directories, so every path handed out must be absolute.
    let run_dir = &std::path::absolute(run_dir)?;
    let gateway = Gateway::default();
    let mut library = open_libraries(config, run_dir)?;
    let evolves = config.mode.evolves();
    let batch = config.evolution_batch_size;

    let mut trials = Vec::new();
    let mut queue: Vec<(String, Subtask)> = Vec::new();
    let mut batches = Vec::new();
    let mut checkpoints = Vec::new();
    let mut finals = 0usize;
    let mut next = 0usize;
    while next < tasks.len() {
        let room = if evolves { batch - finals % batch } else { usize::MAX };
        let n = config.trial_parallelism.min(room).min(tasks.len() - next);
        let ctx = TrialContext {
            config,
            candidates: library.as_ref(),
            backends,
            gateway: &gateway,
        };
        let results: Vec<_> = std::thread::scope(|s| {
            let handles: Vec<_> = (next..next + n)
                .map(|i| {
                    let ctx = &ctx;
                    s.spawn(move || run_task(i + 1, &tasks[i], run_dir, ctx))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|p| std::panic::resume_unwind(p)))
                .collect()
        });
        for r in results {
            let (mut recs, mut units) = r?;
            trials.append(&mut recs);
            queue.append(&mut units);
        }
        next += n;
        finals += n;

        if evolves && evolution_due(finals, batch) {
            let lib = library.as_mut().expect("evolving modes have a library");
            let units: Vec<EvolvableUnit> = queue
                .drain(..)
                .map(|(trial, s)| EvolvableUnit::assess(trial, s, lib))
                .collect();
            let ts = clock.batch_timestamp();
            let report = run_evolution_batch(
                &units,
                lib,
                &ts,
                &run_dir.join("evolution").join(ts.as_str()),
                backends.evolver,
                &gateway,
                &EvolutionOptions::default(),
            )?;
            batches.push(report);
            let ckpt = run_dir.join("checkpoints").join(batches.len().to_string());
            snapshot_packages(lib, &ckpt)?;
            checkpoints.push(ckpt);
        }
    }

    let final_library = match (config.mode, &library) {
        (ExperimentMode::OfflineBuild, Some(lib)) => {
            let dest = run_dir.join("final_library");
            snapshot_packages(lib, &dest)?;
            Some(dest)
        }
        _ => None,
    };
    let metrics = report_metrics(&outcomes_from_trials(&trials), None)?;
    write_json(&run_dir.join("metrics.json"), &metrics)?;
    let summary = ExperimentSummary {
        mode: config.mode,
        tasks: tasks.len(),
        trials: trials.len(),
        final_trials: finals,
        recommendations: trials.iter().filter(|t| t.recommendation.is_some()).count(),
        attributions: trials.iter().filter(|t| t.attribution.is_some()).count(),
        evolution_batches: batches.iter().map(|b| b.batch_timestamp.to_string()).collect(),
        checkpoints,
        final_library,
        unevolved_units: queue.len(),
    };
    write_json(&run_dir.join("run.json"), &summary)?;
    if !queue.is_empty() {
        let pending: Vec<QueuedUnit> = queue
            .into_iter()
            .map(|(trial_id, subtask)| QueuedUnit { trial_id, subtask })
            .collect();
        write_units(&run_dir.join(PENDING_UNITS_FILE), &pending)?;
    }
    Ok(ExperimentOutcome {
        trials,
        metrics,
        batches,
        summary,
    })
}
