//! Turns a finished trial into validated subtask records.

mod evidence;
pub mod testing;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::fsutil::{is_contained_relative, write_json};
use crate::gateway::{
    builtin, AttemptFailure, Executor, Gateway, GatewayError, SchemaRegistry, SessionRef, StructuredRequest,
    ATTRIBUTION_SCHEMA, DEFAULT_MAX_ATTEMPTS, DEFAULT_TIMEOUT,
};

pub use evidence::{normalize_verifier_evidence, read_verifier_evidence, EvidenceMode, OraclePaths, VerifierEvidence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeKind {
    Environment,
    Human,
    Unknown,
}

impl JudgeKind {
    pub const ALL: [JudgeKind; 3] = [Self::Environment, Self::Human, Self::Unknown];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributionKind {
    SuccessViewedSkillButNotUsed,
    SuccessNoSkillSeen,
    SuccessSkillUsedWithExtraExploration,
    FailSkillIssue,
    FailAgentLimit,
    FailClientEnv,
    FailExternalEnv,
    FailUnknownEnv,
    UncertainHumanJudgeRequired,
    UncertainEnvironmentJudgeInconclusive,
    UncertainNoJudge,
}

impl AttributionKind {
    pub const ALL: [AttributionKind; 11] = [
        Self::SuccessViewedSkillButNotUsed,
        Self::SuccessNoSkillSeen,
        Self::SuccessSkillUsedWithExtraExploration,
        Self::FailSkillIssue,
        Self::FailAgentLimit,
        Self::FailClientEnv,
        Self::FailExternalEnv,
        Self::FailUnknownEnv,
        Self::UncertainHumanJudgeRequired,
        Self::UncertainEnvironmentJudgeInconclusive,
        Self::UncertainNoJudge,
    ];

    pub fn is_success(self) -> bool {
        matches!(
            self,
            Self::SuccessViewedSkillButNotUsed | Self::SuccessNoSkillSeen | Self::SuccessSkillUsedWithExtraExploration
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::SuccessViewedSkillButNotUsed => "success_viewed_skill_but_not_used",
            Self::SuccessNoSkillSeen => "success_no_skill_seen",
            Self::SuccessSkillUsedWithExtraExploration => "success_skill_used_with_extra_exploration",
            Self::FailSkillIssue => "fail_skill_issue",
            Self::FailAgentLimit => "fail_agent_limit",
            Self::FailClientEnv => "fail_client_env",
            Self::FailExternalEnv => "fail_external_env",
            Self::FailUnknownEnv => "fail_unknown_env",
            Self::UncertainHumanJudgeRequired => "uncertain_human_judge_required",
            Self::UncertainEnvironmentJudgeInconclusive => "uncertain_environment_judge_inconclusive",
            Self::UncertainNoJudge => "uncertain_no_judge",
        }
    }
}

impl fmt::Display for AttributionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A locator into a skill file. Line numbers are advisory and not checked
/// against the file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillRef {
    pub file_path: String,
    pub start_line: Option<u64>,
    pub end_line: Option<u64>,
    pub capability: String,
    pub used_for: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subtask {
    pub goal: String,
    pub summary: String,
    pub exploration: Option<String>,
    pub exploration_reason: String,
    pub judge: JudgeKind,
    pub judge_reason: String,
    pub attribution: AttributionKind,
    pub attribution_reason: String,
    pub skill_linked: Option<String>,
    pub skill_refs: Vec<SkillRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub trial_id: String,
    pub subtasks: Vec<Subtask>,
    /// Set only for offline-oracle evidence.
    pub ground_truth_path: Option<PathBuf>,
    pub evidence: VerifierEvidence,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub session_ref: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum AttributionError {
    #[error("unreadable verifier evidence: {0}")]
    UnreadableEvidence(String),
    #[error("attribution violates schema: {}", .0.join("; "))]
    SchemaViolation(Vec<String>),
    #[error("subtask {index}: skill_linked `{skill}` was not available in this trial")]
    UnknownLinkedSkill { index: usize, skill: String },
    #[error("subtask {index}: skill ref path `{path}` is absolute")]
    AbsoluteRefPath { index: usize, path: String },
    #[error("subtask {index}: skill ref path `{path}` leaves the skill directory")]
    TraversalRefPath { index: usize, path: String },
    #[error("subtask {index}: skill_refs given without skill_linked")]
    RefWithoutLink { index: usize },
    #[error("subtask {index}: {reason}")]
    LineRange { index: usize, reason: String },
    #[error("invalid subtasks after {attempts} attempts: {}", .diagnostics.join("; "))]
    SubtaskValidation { attempts: usize, diagnostics: Vec<String> },
    #[error("no usable attribution after {attempts} attempts; last failure: {last_failure}")]
    ExhaustedRetries { attempts: usize, last_failure: String },
    #[error("solver session `{0}` not found")]
    SessionNotFound(String),
    #[error(transparent)]
    Gateway(GatewayError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn looks_absolute(p: &str) -> bool {
    let b = p.as_bytes();
    p.starts_with('/') || p.starts_with('\\') || (b.len() >= 2 && b[1] == b':' && b[0].is_ascii_alphabetic())
}

/// Every invariant breach in a schema-valid document, in document order.
fn semantic_errors(subtasks: &[Subtask], available: &BTreeSet<&str>) -> Vec<AttributionError> {
    let mut errs = Vec::new();
    for (index, s) in subtasks.iter().enumerate() {
        match &s.skill_linked {
            Some(skill) if !available.contains(skill.as_str()) => errs.push(AttributionError::UnknownLinkedSkill {
                index,
                skill: skill.clone(),
            }),
            None if !s.skill_refs.is_empty() => errs.push(AttributionError::RefWithoutLink { index }),
            _ => {}
        }
        for r in &s.skill_refs {
            if looks_absolute(&r.file_path) {
                errs.push(AttributionError::AbsoluteRefPath {
                    index,
                    path: r.file_path.clone(),
                });
            } else if !is_contained_relative(Path::new(&r.file_path)) || r.file_path.contains('\\') {
                errs.push(AttributionError::TraversalRefPath {
                    index,
                    path: r.file_path.clone(),
                });
            }
            match (r.start_line, r.end_line) {
                (Some(a), Some(b)) if a > b => errs.push(AttributionError::LineRange {
                    index,
                    reason: format!("{}: start_line {a} > end_line {b}", r.file_path),
                }),
                (Some(_), None) | (None, Some(_)) => errs.push(AttributionError::LineRange {
                    index,
                    reason: format!("{}: start_line and end_line must both be set or both null", r.file_path),
                }),
                _ => {}
            }
        }
    }
    errs
}

fn parse_checked(raw: &Value) -> Result<Vec<Subtask>, AttributionError> {
    let violations = SchemaRegistry::builtin()
        .violations(ATTRIBUTION_SCHEMA, raw)
        .expect("attribution schema is built in");
    if !violations.is_empty() {
        return Err(AttributionError::SchemaViolation(violations));
    }
    let subtasks = raw.get("subtasks").cloned().unwrap_or(Value::Null);
    serde_json::from_value(subtasks).map_err(|e| AttributionError::SchemaViolation(vec![e.to_string()]))
}

/// Enforces the subtask schema plus the cross-field rules: links only to
/// skills available in the trial, relative in-skill ref paths, and paired
/// line numbers.
pub fn validate_subtasks<S: AsRef<str>>(raw: &Value, available_skills: &[S]) -> Result<Vec<Subtask>, AttributionError> {
    let subtasks = parse_checked(raw)?;
    let available: BTreeSet<&str> = available_skills.iter().map(AsRef::as_ref).collect();
    match semantic_errors(&subtasks, &available).into_iter().next() {
        Some(e) => Err(e),
        None => Ok(subtasks),
    }
}

/// Gaps the engine reports but does not reject.
pub fn coverage_warnings<S: AsRef<str>>(subtasks: &[Subtask], installed: &[S], evidence: &VerifierEvidence) -> Vec<String> {
    let linked: BTreeSet<&str> = subtasks.iter().filter_map(|s| s.skill_linked.as_deref()).collect();
    let mut out: Vec<String> = installed
        .iter()
        .map(AsRef::as_ref)
        .filter(|n| !linked.contains(n))
        .map(|n| format!("installed skill `{n}` is not linked by any subtask"))
        .collect();
    if evidence.failed > 0 && subtasks.iter().all(|s| s.attribution.is_success()) {
        out.push(format!(
            "every subtask is labeled successful but the verifier reported {} failed test(s)",
            evidence.failed
        ));
    }
    out
}

/// Everything needed to distill one finished trial.
#[derive(Debug, Clone)]
pub struct DistillRequest {
    pub trial_id: String,
    /// The solver's working directory.
    pub cwd: PathBuf,
    /// Solver session to resume.
    pub session: SessionRef,
    /// Skills installed for the solver in this trial.
    pub available_skills: Vec<String>,
    pub evidence: VerifierEvidence,
    /// Receives the gateway artifacts plus `subtasks.json`, `evidence.json`, `report.json`.
    pub artifact_dir: Option<PathBuf>,
    pub max_attempts: u32,
    pub timeout: Duration,
}

impl DistillRequest {
    pub fn new(
        trial_id: impl Into<String>,
        cwd: impl Into<PathBuf>,
        session: SessionRef,
        available_skills: Vec<String>,
        evidence: VerifierEvidence,
    ) -> Self {
        Self {
            trial_id: trial_id.into(),
            cwd: cwd.into(),
            session,
            available_skills,
            evidence,
            artifact_dir: None,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            timeout: DEFAULT_TIMEOUT,
        }
    }
}

fn bindings(req: &DistillRequest) -> Result<BTreeMap<String, String>, GatewayError> {
    let ground_truth = match &req.evidence.oracle_paths {
        Some(p) => {
            let b = BTreeMap::from([("ground_truth_dir".to_string(), p.root.display().to_string())]);
            builtin::ground_truth_context().render(&b)?.user_text
        }
        None => String::new(),
    };
    let skills = if req.available_skills.is_empty() {
        "(none)".to_string()
    } else {
        req.available_skills.join(", ")
    };
    Ok([
        ("cwd", req.cwd.display().to_string()),
        ("available_skills", skills),
        ("ground_truth_context", ground_truth),
        ("num_total_test_cases", req.evidence.total.to_string()),
        ("num_passed_test_cases", req.evidence.passed.to_string()),
        ("num_failed_test_cases", req.evidence.failed.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect())
}

/// Resumes the solver session with the attribution prompt and validates the
/// returned subtasks.
///
/// When every attempt produced well-formed JSON that failed the subtask rules,
/// the error is `SubtaskValidation`; otherwise exhausted attempts surface as
/// `ExhaustedRetries`.
pub fn distill_trajectory(
    req: &DistillRequest,
    executor: &dyn Executor,
    gateway: &Gateway,
) -> Result<AttributionReport, AttributionError> {
    let mut sreq = StructuredRequest::new(
        builtin::attribution(),
        bindings(req).map_err(AttributionError::Gateway)?,
        ATTRIBUTION_SCHEMA,
        &req.cwd,
    )
    .resume(req.session.clone())
    .max_attempts(req.max_attempts)
    .timeout(req.timeout);
    if let Some(dir) = &req.artifact_dir {
        sreq = sreq.artifacts(dir);
    }
    let available: BTreeSet<&str> = req.available_skills.iter().map(String::as_str).collect();
    let check = |v: &Value| -> Result<(), String> {
        let subtasks = parse_checked(v).map_err(|e| e.to_string())?;
        let errs = semantic_errors(&subtasks, &available);
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))
        }
    };
    let res = match gateway.execute_structured_with(&sreq, executor, &check) {
        Ok(r) => r,
        Err(GatewayError::SessionNotFound(id)) => return Err(AttributionError::SessionNotFound(id)),
        Err(GatewayError::ExhaustedRetries { failures, .. }) => {
            let attempts = failures.len();
            let last = failures.last().cloned().unwrap_or(AttemptFailure::MissingOutput);
            return Err(match last {
                AttemptFailure::SchemaViolation(v) => AttributionError::SubtaskValidation {
                    attempts,
                    diagnostics: v,
                },
                AttemptFailure::Rejected(r) => AttributionError::SubtaskValidation {
                    attempts,
                    diagnostics: r.split("; ").map(str::to_string).collect(),
                },
                other => AttributionError::ExhaustedRetries {
                    attempts,
                    last_failure: other.to_string(),
                },
            });
        }
        Err(GatewayError::ExecutorTimeout { attempts }) => {
            return Err(AttributionError::ExhaustedRetries {
                attempts: attempts as usize,
                last_failure: "timeout".into(),
            })
        }
        Err(e) => return Err(AttributionError::Gateway(e)),
    };
    let subtasks = validate_subtasks(&res.parsed_output, &req.available_skills)?;
    let warnings = coverage_warnings(&subtasks, &req.available_skills, &req.evidence);
    for w in &warnings {
        tracing::warn!(trial = %req.trial_id, "{w}");
    }
    let report = AttributionReport {
        trial_id: req.trial_id.clone(),
        ground_truth_path: req.evidence.oracle_paths.as_ref().map(|p| p.root.clone()),
        subtasks,
        evidence: req.evidence.clone(),
        warnings,
        session_ref: Some(res.session_ref),
    };
    if let Some(dir) = &req.artifact_dir {
        write_report(dir, &report)?;
    }
    Ok(report)
}

/// Writes `subtasks.json` (schema-conformant), `evidence.json`, and `report.json`.
pub fn write_report(dir: &Path, report: &AttributionReport) -> std::io::Result<()> {
    write_json(&dir.join("subtasks.json"), &json!({ "subtasks": report.subtasks }))?;
    write_json(&dir.join("evidence.json"), &report.evidence)?;
    write_json(&dir.join("report.json"), report)
}

#[cfg(test)]
mod tests;
