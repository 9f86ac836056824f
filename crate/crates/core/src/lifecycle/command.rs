use std::path::PathBuf;
use std::process::Command;
use std::time::Duration;

use super::{SolveOutcome, SolveRequest, TrialEnvironment, VerifierArtifact};
use crate::attribution::VerifierEvidence;
use crate::process::{run_with_timeout, tail};
use crate::profile::TaskSpec;

/// Trial environment backed by two external programs.
///
/// Both run in the trial workspace with the instruction on stdin and these
/// variables set: `TRIAL_ID`, `TASK_ID`, `TASK_ENVIRONMENT_REF`,
/// `TASK_VERIFIER_REF`, `SKILL_DIR`, `WORKSPACE`, `ATTEMPT`.
///
/// The solver prints its session id on stdout (last non-empty line) and may
/// write a transcript to `$TRANSCRIPT_FILE`. The verifier also gets
/// `SESSION_REF`, and its stdout is the verifier artifact: a reward, a JSON
/// count report, or pytest output. For oracle evidence, the task's
/// `verifier_ref` must name the oracle directory.
///
/// A failed attempt is retried until `max_attempts` is reached.
#[derive(Debug, Clone)]
pub struct CommandEnvironment {
    solver: Vec<String>,
    verifier: Vec<String>,
    pub timeout: Duration,
    pub max_attempts: u32,
}

impl CommandEnvironment {
    /// Command lines are split on whitespace. `None` if either is blank.
    pub fn new(solver: &str, verifier: &str) -> Option<Self> {
        let split = |s: &str| -> Vec<String> { s.split_whitespace().map(str::to_string).collect() };
        let (solver, verifier) = (split(solver), split(verifier));
        (!solver.is_empty() && !verifier.is_empty()).then_some(Self {
            solver,
            verifier,
            timeout: Duration::from_secs(2 * 60 * 60),
            max_attempts: 1,
        })
    }

    fn command(&self, argv: &[String], req: &SolveRequest<'_>) -> Command {
        let mut cmd = Command::new(&argv[0]);
        cmd.args(&argv[1..])
            .current_dir(req.workspace)
            .env("TRIAL_ID", req.trial_id)
            .env("TASK_ID", &req.task.task_id)
            .env("TASK_ENVIRONMENT_REF", &req.task.environment_ref)
            .env("TASK_VERIFIER_REF", &req.task.verifier_ref)
            .env("SKILL_DIR", req.skill_dir)
            .env("WORKSPACE", req.workspace)
            .env("ATTEMPT", req.attempt.to_string());
        cmd
    }

    fn run(&self, cmd: Command, input: &str) -> Result<String, String> {
        let name = format!("{:?}", cmd.get_program());
        let done = run_with_timeout(cmd, input, self.timeout)
            .map_err(|e| format!("{name}: {e}"))?
            .ok_or_else(|| format!("{name}: timed out after {:?}", self.timeout))?;
        if !done.status.success() {
            return Err(format!("{name}: {}: {}", done.status, tail(&done.stderr, 2000)));
        }
        Ok(String::from_utf8_lossy(&done.stdout).into_owned())
    }
}

fn transcript_path(req: &SolveRequest<'_>) -> PathBuf {
    req.workspace.with_file_name("transcript.txt")
}

impl TrialEnvironment for CommandEnvironment {
    fn solve(&self, req: &SolveRequest<'_>) -> Result<SolveOutcome, String> {
        let transcript = transcript_path(req);
        let mut cmd = self.command(&self.solver, req);
        cmd.env("TRANSCRIPT_FILE", &transcript);
        let out = self.run(cmd, req.instruction)?;
        let session_ref = out
            .lines()
            .map(str::trim)
            .rfind(|l| !l.is_empty())
            .map(str::to_string)
            .unwrap_or_else(|| req.trial_id.to_string());
        Ok(SolveOutcome {
            session_ref,
            transcript: std::fs::read_to_string(&transcript).ok(),
        })
    }

    fn verify(&self, req: &SolveRequest<'_>, solved: &SolveOutcome) -> Result<VerifierArtifact, String> {
        let mut cmd = self.command(&self.verifier, req);
        cmd.env("SESSION_REF", &solved.session_ref);
        let raw = self.run(cmd, req.instruction)?;
        let oracle_root = Some(PathBuf::from(&req.task.verifier_ref)).filter(|p| p.is_dir());
        Ok(VerifierArtifact { raw, oracle_root })
    }

    fn retry_pending(&self, _task: &TaskSpec, attempt: u32, evidence: Option<&VerifierEvidence>) -> bool {
        attempt < self.max_attempts && !evidence.is_some_and(VerifierEvidence::all_passed)
    }
}
