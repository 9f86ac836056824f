//! In-process stand-ins for the task environment and agent backends, for
//! tests, examples, and dry runs.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde_json::{json, Value};

use super::{SolveOutcome, SolveRequest, TrialEnvironment, VerifierArtifact};
use crate::attribution::VerifierEvidence;
use crate::gateway::{ExecutorCall, ScriptStep};
use crate::profile::TaskSpec;

type Verdict = dyn Fn(&SolveRequest<'_>) -> VerifierArtifact + Send + Sync;

/// What the solver saw on one attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeenSolve {
    pub trial_id: String,
    pub task_id: String,
    pub attempt: u32,
    pub instruction: String,
    /// Skill directories installed for the attempt, sorted.
    pub skills: Vec<String>,
}

/// A task environment whose verifier verdict comes from a function.
pub struct ScriptedEnvironment {
    verdict: Box<Verdict>,
    attempts: u32,
    seen: Mutex<Vec<SeenSolve>>,
}

pub(crate) fn dir_names(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .map(|rd| {
            rd.filter_map(Result::ok)
                .filter(|e| e.path().is_dir())
                .filter_map(|e| e.file_name().into_string().ok())
                .filter(|n| !n.starts_with('.'))
                .collect()
        })
        .unwrap_or_default();
    v.sort();
    v
}

impl ScriptedEnvironment {
    pub fn new(verdict: impl Fn(&SolveRequest<'_>) -> VerifierArtifact + Send + Sync + 'static) -> Self {
        Self {
            verdict: Box::new(verdict),
            attempts: 1,
            seen: Mutex::new(Vec::new()),
        }
    }

    /// Every attempt reports the same scalar reward.
    pub fn constant_reward(reward: f64) -> Self {
        Self::new(move |_| VerifierArtifact {
            raw: reward.to_string(),
            oracle_root: None,
        })
    }

    /// Each task runs exactly `n` attempts; only the last is final.
    pub fn with_attempts(mut self, n: u32) -> Self {
        self.attempts = n.max(1);
        self
    }

    pub fn seen(&self) -> Vec<SeenSolve> {
        self.seen.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

impl TrialEnvironment for ScriptedEnvironment {
    fn solve(&self, req: &SolveRequest<'_>) -> Result<SolveOutcome, String> {
        self.seen.lock().unwrap_or_else(|e| e.into_inner()).push(SeenSolve {
            trial_id: req.trial_id.to_string(),
            task_id: req.task.task_id.clone(),
            attempt: req.attempt,
            instruction: req.instruction.to_string(),
            skills: dir_names(req.skill_dir),
        });
        Ok(SolveOutcome {
            session_ref: format!("solver-{}", req.trial_id),
            transcript: Some(format!("transcript of {}", req.trial_id)),
        })
    }

    fn verify(&self, req: &SolveRequest<'_>, _solved: &SolveOutcome) -> Result<VerifierArtifact, String> {
        Ok((self.verdict)(req))
    }

    fn retry_pending(&self, _task: &TaskSpec, attempt: u32, _evidence: Option<&VerifierEvidence>) -> bool {
        attempt < self.attempts
    }
}

/// Recommendation responder: selects up to `max` skills from the candidate
/// library in name order, or none when it is empty.
pub fn recommend_first(max: usize) -> impl Fn(&ExecutorCall<'_>) -> ScriptStep + Send + Sync + 'static {
    move |call| {
        let names: Vec<String> = dir_names(call.working_root).into_iter().take(max).collect();
        let context = if names.is_empty() {
            "No relevant skill found.".to_string()
        } else {
            format!("Start with {}.", names.join(", "))
        };
        ScriptStep::Json(json!({ "skill_names": names, "optimized_context": context }))
    }
}

fn subtask(goal: &str, attribution: &str, skill: Option<&str>) -> Value {
    json!({
        "goal": goal,
        "summary": format!("Completed: {goal}."),
        "exploration": "Needed an extra flag the skill did not mention.",
        "exploration_reason": "The documented command failed without it.",
        "judge": "environment",
        "judge_reason": "The command exited cleanly.",
        "attribution": attribution,
        "attribution_reason": "Outcome matches the verifier.",
        "skill_linked": skill,
        "skill_refs": if skill.is_some() {
            json!([{"file_path": "SKILL.md", "start_line": 1, "end_line": 3, "capability": "setup", "used_for": "first step"}])
        } else {
            json!([])
        },
    })
}

/// Attribution responder: one successful subtask with exploration. It links
/// the first installed skill (an edit candidate) or, with none installed,
/// links nothing (a create candidate).
pub fn attribute_one() -> impl Fn(&ExecutorCall<'_>) -> ScriptStep + Send + Sync + 'static {
    |call| {
        let skills_dir = call.working_root.with_file_name("skills");
        let installed = dir_names(&skills_dir);
        let doc = match installed.first() {
            Some(s) => subtask("apply the skill", "success_skill_used_with_extra_exploration", Some(s)),
            None => subtask("solve from scratch", "success_no_skill_seen", None),
        };
        ScriptStep::Json(json!({ "subtasks": [doc] }))
    }
}

/// Evolution responder: edit requests append a line to the skill copy; create
/// requests write `learned-<n>` under the create directory.
pub fn evolve_simply() -> impl Fn(&ExecutorCall<'_>) -> ScriptStep + Send + Sync + 'static {
    let counter = AtomicUsize::new(0);
    move |call| {
        let root: PathBuf = call.working_root.to_path_buf();
        let edit_root = root.join("edit");
        if let Some(skill) = dir_names(&edit_root).first() {
            let f = edit_root.join(skill).join("SKILL.md");
            let mut text = std::fs::read_to_string(&f).unwrap_or_default();
            text.push_str("\nAlso pass the extra flag when the first attempt fails.\n");
            if std::fs::write(&f, text).is_err() {
                return ScriptStep::Fail("cannot write edit copy".into());
            }
            return ScriptStep::Json(json!({"actions": [{
                "action_type": "knowledge_addition",
                "rationale": "Repeated exploration.",
                "summary": "Added the extra flag.",
                "skill_dir_path": null
            }]}));
        }
        let n = counter.fetch_add(1, Ordering::SeqCst) + 1;
        let name = format!("learned-{n}");
        let dir = root.join("create").join(&name);
        let body = format!(
            "---\nname: {name}\ndescription: Learned procedure {n}.\n---\n1. Run the setup command.\n2. Pass the extra flag.\n"
        );
        if std::fs::create_dir_all(&dir).and_then(|()| std::fs::write(dir.join("SKILL.md"), body)).is_err() {
            return ScriptStep::Fail("cannot write new skill".into());
        }
        ScriptStep::Json(json!({"actions": [{
            "action_type": "create_skill",
            "rationale": "No existing skill covered this.",
            "summary": null,
            "skill_dir_path": dir
        }]}))
    }
}
