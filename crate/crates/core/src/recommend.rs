//! Pre-task exposure control: pick a few skills for the solver, install only
//! those, and append a short usage guide to the task instruction.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::gateway::{
    builtin, Executor, Gateway, GatewayError, SchemaRegistry, StructuredRequest, DEFAULT_MAX_ATTEMPTS,
    DEFAULT_TIMEOUT, RECOMMENDATION_SCHEMA,
};
use crate::store::{install_selection, SkillLibrary};

pub const DEFAULT_TOP_K: usize = 5;

/// Placed between the task instruction and the usage guidance.
pub const GUIDANCE_SEPARATOR: &str = "\n\nSkill usage guidance:\n";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecommendationResult {
    pub skill_names: Vec<String>,
    pub optimized_context: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RecommendationError {
    #[error("recommendation violates schema: {}", .0.join("; "))]
    SchemaViolation(Vec<String>),
    #[error("optimized_context is empty")]
    EmptyContext,
    #[error("skill `{0}` recommended more than once")]
    DuplicateName(String),
    #[error("no skill directory named `{0}` in the candidate library")]
    UnknownSkill(String),
}

/// Checks a parsed recommendation against the schema and the candidate library.
///
/// More than `top_k` names is a schema violation rather than a truncation, so
/// the installed set always matches the guidance text.
pub fn validate_recommendation(
    raw: &Value,
    library: &SkillLibrary,
    top_k: usize,
) -> Result<RecommendationResult, RecommendationError> {
    if let Some(ctx) = raw.get("optimized_context").and_then(Value::as_str) {
        if ctx.trim().is_empty() {
            return Err(RecommendationError::EmptyContext);
        }
    }
    let violations = SchemaRegistry::builtin()
        .violations(RECOMMENDATION_SCHEMA, raw)
        .expect("recommendation schema is built in");
    if !violations.is_empty() {
        return Err(RecommendationError::SchemaViolation(violations));
    }
    let result: RecommendationResult =
        serde_json::from_value(raw.clone()).map_err(|e| RecommendationError::SchemaViolation(vec![e.to_string()]))?;
    let mut seen = BTreeSet::new();
    for name in &result.skill_names {
        if !seen.insert(name.as_str()) {
            return Err(RecommendationError::DuplicateName(name.clone()));
        }
    }
    if let Some(ghost) = result.skill_names.iter().find(|n| !library.contains(n)) {
        return Err(RecommendationError::UnknownSkill(ghost.clone()));
    }
    if result.skill_names.len() > top_k {
        return Err(RecommendationError::SchemaViolation(vec![format!(
            "/skill_names: {} names exceed top_k {top_k}",
            result.skill_names.len()
        )]));
    }
    Ok(result)
}

#[derive(Debug, Clone)]
pub struct RecommendationRequest<'a> {
    pub task_instruction: String,
    pub candidate_library: &'a SkillLibrary,
    pub top_k: usize,
    pub solver_skill_dir: PathBuf,
    /// Receives the gateway artifacts plus `outcome.json`.
    pub artifact_dir: Option<PathBuf>,
    pub max_attempts: u32,
    pub timeout: Duration,
}

impl<'a> RecommendationRequest<'a> {
    pub fn new(
        task_instruction: impl Into<String>,
        candidate_library: &'a SkillLibrary,
        solver_skill_dir: impl Into<PathBuf>,
    ) -> Self {
        Self {
            task_instruction: task_instruction.into(),
            candidate_library,
            top_k: DEFAULT_TOP_K,
            solver_skill_dir: solver_skill_dir.into(),
            artifact_dir: None,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            timeout: DEFAULT_TIMEOUT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecommendationMode {
    Selected,
    FallbackAll,
    NoneSelected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecommendationOutcome {
    pub mode: RecommendationMode,
    pub installed: Vec<String>,
    pub final_instruction: String,
    pub result: Option<RecommendationResult>,
    pub error_log: Option<String>,
    pub session_ref: Option<String>,
}

fn request_problem(req: &RecommendationRequest<'_>) -> Option<String> {
    if req.task_instruction.trim().is_empty() {
        Some("task instruction is empty".into())
    } else if req.top_k == 0 {
        Some("top_k must be at least 1".into())
    } else {
        None
    }
}

fn select(
    req: &RecommendationRequest<'_>,
    executor: &dyn Executor,
    gateway: &Gateway,
) -> Result<(RecommendationResult, String), String> {
    if let Some(p) = request_problem(req) {
        return Err(p);
    }
    let library = req.candidate_library;
    let bindings: BTreeMap<String, String> = [
        ("skills_root", library.root().display().to_string()),
        ("user_query", req.task_instruction.clone()),
        ("default_top_k", req.top_k.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let mut sreq = StructuredRequest::new(builtin::recommendation(), bindings, RECOMMENDATION_SCHEMA, library.root())
        .max_attempts(req.max_attempts)
        .timeout(req.timeout);
    if let Some(dir) = &req.artifact_dir {
        sreq = sreq.artifacts(dir);
    }
    let check = |v: &Value| {
        validate_recommendation(v, library, req.top_k)
            .map(drop)
            .map_err(|e| e.to_string())
    };
    let res = gateway
        .execute_structured_with(&sreq, executor, &check)
        .map_err(|e| describe(&e))?;
    let result = validate_recommendation(&res.parsed_output, library, req.top_k).map_err(|e| e.to_string())?;
    Ok((result, res.session_ref))
}

fn describe(e: &GatewayError) -> String {
    match e {
        GatewayError::ExhaustedRetries { failures, .. } => {
            let lines: Vec<String> = failures
                .iter()
                .enumerate()
                .map(|(i, f)| format!("attempt {}: {f}", i + 1))
                .collect();
            format!("recommendation failed after {} attempts\n{}", failures.len(), lines.join("\n"))
        }
        other => other.to_string(),
    }
}

/// Runs the recommendation stage for one trial. Never fails: any error installs
/// the whole candidate library and leaves the instruction unchanged.
pub fn recommend_for_task(
    req: &RecommendationRequest<'_>,
    executor: &dyn Executor,
    gateway: &Gateway,
) -> RecommendationOutcome {
    let mut session_ref = None;
    let outcome = match select(req, executor, gateway) {
        Ok((result, session)) => {
            session_ref = Some(session);
            match install_selection(req.candidate_library, &result.skill_names, &req.solver_skill_dir) {
                Ok(_) if result.skill_names.is_empty() => RecommendationOutcome {
                    mode: RecommendationMode::NoneSelected,
                    installed: Vec::new(),
                    final_instruction: req.task_instruction.clone(),
                    result: Some(result),
                    error_log: None,
                    session_ref: None,
                },
                Ok(_) => RecommendationOutcome {
                    mode: RecommendationMode::Selected,
                    installed: result.skill_names.clone(),
                    final_instruction: format!(
                        "{}{GUIDANCE_SEPARATOR}{}",
                        req.task_instruction, result.optimized_context
                    ),
                    result: Some(result),
                    error_log: None,
                    session_ref: None,
                },
                Err(e) => fallback(req, format!("installing selection failed: {e}"), Some(result)),
            }
        }
        Err(log) => fallback(req, log, None),
    };
    let outcome = RecommendationOutcome { session_ref, ..outcome };
    if let Some(dir) = &req.artifact_dir {
        if let Err(e) = write_outcome(dir, &outcome) {
            tracing::warn!("could not write recommendation outcome: {e}");
        }
    }
    outcome
}

fn fallback(req: &RecommendationRequest<'_>, log: String, result: Option<RecommendationResult>) -> RecommendationOutcome {
    tracing::warn!("recommendation fell back to all skills: {log}");
    let names = req.candidate_library.names();
    let (installed, error_log) = match install_selection(req.candidate_library, &names, &req.solver_skill_dir) {
        Ok(_) => (names, log),
        Err(e) => (Vec::new(), format!("{log}\ninstalling all candidates failed: {e}")),
    };
    RecommendationOutcome {
        mode: RecommendationMode::FallbackAll,
        installed,
        final_instruction: req.task_instruction.clone(),
        result,
        error_log: Some(error_log),
        session_ref: None,
    }
}

fn write_outcome(dir: &Path, outcome: &RecommendationOutcome) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join("outcome.json"),
        serde_json::to_vec_pretty(outcome).map_err(std::io::Error::other)?,
    )
}
