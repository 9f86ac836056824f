//! Experiment driver: the per-trial pipeline, trial-end hooks, evolution
//! barriers, and metrics.

mod command;
mod config;
mod experiment;
mod metrics;
pub mod simulate;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attribution::{
    distill_trajectory, normalize_verifier_evidence, AttributionError, AttributionReport, DistillRequest, EvidenceMode,
    OraclePaths, Subtask, VerifierEvidence,
};
use crate::fsutil::write_json;
use crate::gateway::{Executor, Gateway, SessionRef};
use crate::profile::TaskSpec;
use crate::recommend::{recommend_for_task, RecommendationOutcome, RecommendationRequest};
use crate::store::SkillLibrary;

pub use command::CommandEnvironment;
pub use config::{read_tasks, ExperimentConfig, ExperimentMode};
pub use experiment::{run_experiment, ExperimentOutcome, ExperimentSummary, PENDING_UNITS_FILE};
pub use metrics::{load_run_outcomes, merge_outcomes, outcomes_from_trials, report_metrics, MetricsReport, Outcomes};

#[derive(Debug, thiserror::Error)]
pub enum LifecycleError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("baseline has no outcomes for task `{0}`")]
    MissingBaselineTask(String),
    #[error("metrics: {0}")]
    Metrics(String),
    #[error(transparent)]
    Store(#[from] crate::store::StoreError),
    #[error(transparent)]
    Evolution(#[from] crate::evolution::EvolutionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// True when `completed_final_trials` just reached a multiple of `batch_size`.
pub fn evolution_due(completed_final_trials: usize, batch_size: usize) -> bool {
    batch_size > 0 && completed_final_trials > 0 && completed_final_trials.is_multiple_of(batch_size)
}

/// Trial states only move forward, in this order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialState {
    Pending,
    Solved,
    Verified,
    Attributed,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStage {
    Solver,
    Verifier,
    Attribution,
}

/// A per-trial failure. Recorded, never thrown: the stream continues.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub stage: TrialStage,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: String,
    pub task: TaskSpec,
    pub attempt: u32,
    pub is_final_attempt: bool,
    pub recommendation: Option<RecommendationOutcome>,
    pub solver_session: Option<String>,
    pub evidence: Option<VerifierEvidence>,
    pub attribution: Option<AttributionReport>,
    pub state: TrialState,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<TrialFailure>,
    /// Content hash of the candidate library when the trial started.
    pub library_hash: Option<String>,
    /// Subtasks handed to the evolution queue.
    pub units_enqueued: usize,
    #[serde(skip)]
    solver_transcript: Option<String>,
}

impl TrialRecord {
    fn new(trial_id: String, task: TaskSpec, attempt: u32) -> Self {
        Self {
            trial_id,
            task,
            attempt,
            is_final_attempt: false,
            recommendation: None,
            solver_session: None,
            evidence: None,
            attribution: None,
            state: TrialState::Pending,
            failures: Vec::new(),
            library_hash: None,
            units_enqueued: 0,
            solver_transcript: None,
        }
    }

    fn advance(&mut self, to: TrialState) {
        assert!(to >= self.state, "trial state moved back from {:?} to {:?}", self.state, to);
        self.state = to;
    }

    fn fail(&mut self, stage: TrialStage, message: impl Into<String>) {
        let message = message.into();
        tracing::warn!(trial = %self.trial_id, ?stage, "{message}");
        self.failures.push(TrialFailure { stage, message });
    }

    pub fn passed(&self) -> bool {
        self.evidence.as_ref().is_some_and(VerifierEvidence::all_passed)
    }
}

/// What the solver is asked to do in one attempt.
#[derive(Debug, Clone)]
pub struct SolveRequest<'a> {
    pub trial_id: &'a str,
    pub task: &'a TaskSpec,
    /// Task instruction, with skill guidance appended when a selection was made.
    pub instruction: &'a str,
    /// Skills visible to the solver.
    pub skill_dir: &'a Path,
    /// Solver working directory.
    pub workspace: &'a Path,
    pub attempt: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SolveOutcome {
    pub session_ref: String,
    /// Replayed to attributors whose backend cannot resume sessions.
    pub transcript: Option<String>,
}

/// Raw verifier output plus, for oracle evidence, the oracle directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifierArtifact {
    pub raw: String,
    pub oracle_root: Option<PathBuf>,
}

/// The task environment: solver agent plus verifier, and the harness's retry policy.
pub trait TrialEnvironment: Send + Sync {
    fn solve(&self, req: &SolveRequest<'_>) -> Result<SolveOutcome, String>;

    fn verify(&self, req: &SolveRequest<'_>, solved: &SolveOutcome) -> Result<VerifierArtifact, String>;

    /// Whether the harness will run another attempt after this one.
    fn retry_pending(&self, _task: &TaskSpec, _attempt: u32, _evidence: Option<&VerifierEvidence>) -> bool {
        false
    }
}

/// Agent backends for each stage.
#[derive(Clone, Copy)]
pub struct Backends<'a> {
    pub recommender: &'a dyn Executor,
    pub attributor: &'a dyn Executor,
    pub evolver: &'a dyn Executor,
    pub environment: &'a dyn TrialEnvironment,
}

/// Shared inputs for the trial hooks.
#[derive(Clone, Copy)]
pub struct TrialContext<'a> {
    pub config: &'a ExperimentConfig,
    /// Library recommendations draw from. `None` in baseline mode.
    pub candidates: Option<&'a SkillLibrary>,
    pub backends: Backends<'a>,
    pub gateway: &'a Gateway,
}

/// Runs recommendation (outside baseline), the solver, and the verifier for
/// one attempt, writing artifacts under `trial_dir`.
pub fn run_trial(
    task: &TaskSpec,
    trial_id: &str,
    attempt: u32,
    trial_dir: &Path,
    ctx: &TrialContext<'_>,
) -> Result<TrialRecord, LifecycleError> {
    let mut rec = TrialRecord::new(trial_id.to_string(), task.clone(), attempt);
    let skill_dir = trial_dir.join("skills");
    let workspace = trial_dir.join("workspace");
    std::fs::create_dir_all(&skill_dir)?;
    std::fs::create_dir_all(&workspace)?;

    let mut instruction = task.instruction.clone();
    if let (true, Some(lib)) = (ctx.config.mode.recommends(), ctx.candidates) {
        rec.library_hash = Some(lib.content_hash()?);
        let mut req = RecommendationRequest::new(&task.instruction, lib, &skill_dir);
        req.top_k = ctx.config.top_k;
        req.artifact_dir = Some(trial_dir.join("recommendation"));
        let outcome = recommend_for_task(&req, ctx.backends.recommender, ctx.gateway);
        instruction = outcome.final_instruction.clone();
        rec.recommendation = Some(outcome);
    }

    let sreq = SolveRequest {
        trial_id,
        task,
        instruction: &instruction,
        skill_dir: &skill_dir,
        workspace: &workspace,
        attempt,
    };
    let env = ctx.backends.environment;
    match env.solve(&sreq) {
        Err(e) => rec.fail(TrialStage::Solver, e),
        Ok(solved) => {
            rec.solver_session = Some(solved.session_ref.clone());
            rec.solver_transcript = solved.transcript.clone();
            rec.advance(TrialState::Solved);
            match verify(&sreq, &solved, ctx, trial_dir) {
                Ok(ev) => {
                    rec.evidence = Some(ev);
                    rec.advance(TrialState::Verified);
                }
                Err(e) => rec.fail(TrialStage::Verifier, e),
            }
        }
    }
    rec.is_final_attempt = !env.retry_pending(task, attempt, rec.evidence.as_ref());
    Ok(rec)
}

fn verify(
    sreq: &SolveRequest<'_>,
    solved: &SolveOutcome,
    ctx: &TrialContext<'_>,
    trial_dir: &Path,
) -> Result<VerifierEvidence, String> {
    let artifact = ctx.backends.environment.verify(sreq, solved)?;
    let dir = trial_dir.join("verifier");
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    std::fs::write(dir.join("raw.txt"), &artifact.raw).map_err(|e| e.to_string())?;
    let oracle = match ctx.config.evidence_mode {
        EvidenceMode::Online => None,
        EvidenceMode::OfflineOracle => Some(OraclePaths::at(
            artifact
                .oracle_root
                .ok_or("offline_oracle evidence needs an oracle directory from the verifier")?,
        )),
    };
    let ev = normalize_verifier_evidence(&artifact.raw, oracle).map_err(|e| e.to_string())?;
    write_json(&dir.join("evidence.json"), &ev).map_err(|e| e.to_string())?;
    Ok(ev)
}

/// Trial-end hook. Non-final attempts close without attribution. Final
/// attempts in evolving modes are distilled and their subtasks returned for
/// the evolution queue. Attribution failures are recorded; the trial still closes.
pub fn finalize_trial(
    mut rec: TrialRecord,
    trial_dir: &Path,
    ctx: &TrialContext<'_>,
) -> (TrialRecord, Vec<(String, Subtask)>) {
    let mut units = Vec::new();
    let ready = rec.is_final_attempt && ctx.config.mode.evolves() && rec.state == TrialState::Verified;
    if ready {
        match attribute(&rec, trial_dir, ctx) {
            Ok(report) => {
                units = report.subtasks.iter().map(|s| (rec.trial_id.clone(), s.clone())).collect();
                rec.attribution = Some(report);
                rec.advance(TrialState::Attributed);
            }
            Err(e) => rec.fail(TrialStage::Attribution, e.to_string()),
        }
    }
    rec.units_enqueued = units.len();
    rec.advance(TrialState::Closed);
    (rec, units)
}

fn attribute(rec: &TrialRecord, trial_dir: &Path, ctx: &TrialContext<'_>) -> Result<AttributionReport, AttributionError> {
    let session_id = rec.solver_session.clone().unwrap_or_default();
    let mut session = SessionRef::new(session_id);
    session.transcript = rec.solver_transcript.clone();
    let available = rec.recommendation.as_ref().map(|r| r.installed.clone()).unwrap_or_default();
    let evidence = rec.evidence.clone().expect("verified trial has evidence");
    let mut req = DistillRequest::new(&rec.trial_id, trial_dir.join("workspace"), session, available, evidence);
    req.artifact_dir = Some(trial_dir.join("attribution"));
    distill_trajectory(&req, ctx.backends.attributor, ctx.gateway)
}

#[cfg(test)]
mod tests;
