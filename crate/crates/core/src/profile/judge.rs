use std::collections::{BTreeSet, HashMap};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::runtime::RuntimeRequirementProfile;
use super::ProfileError;
use crate::store::SkillPackage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityProfile {
    pub consistency: f64,
    pub completeness: f64,
    pub task_orientation: f64,
    pub judge_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifiabilityProfile {
    pub low_ambiguity_success: bool,
    pub reproducible_sandbox: bool,
    pub constructible_instances: bool,
    pub verifiable: bool,
}

impl VerifiabilityProfile {
    pub fn from_components(low_ambiguity_success: bool, reproducible_sandbox: bool, constructible_instances: bool) -> Self {
        Self {
            low_ambiguity_success,
            reproducible_sandbox,
            constructible_instances,
            verifiable: low_ambiguity_success && reproducible_sandbox && constructible_instances,
        }
    }
}

/// Raw scores as a judge reports them, before clamping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityScores {
    pub consistency: f64,
    pub completeness: f64,
    pub task_orientation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifiabilityVerdict {
    pub low_ambiguity_success: bool,
    pub reproducible_sandbox: bool,
    pub constructible_instances: bool,
}

/// Scores a package on consistency, completeness, and task orientation.
///
/// Implement this to plug in a model-backed judge; [`LexicalQualityJudge`] is the default.
pub trait QualityJudge: Send + Sync {
    fn id(&self) -> &str;
    fn judge(&self, pkg: &SkillPackage) -> Result<QualityScores, String>;
}

pub trait VerifiabilityJudge: Send + Sync {
    fn id(&self) -> &str;
    fn judge(
        &self,
        pkg: &SkillPackage,
        runtime: &RuntimeRequirementProfile,
    ) -> Result<VerifiabilityVerdict, String>;
}

fn clamp01(x: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(0.0, 1.0)
    }
}

pub fn assess_quality(pkg: &SkillPackage, judge: &dyn QualityJudge) -> Result<QualityProfile, ProfileError> {
    let scores = judge.judge(pkg).map_err(|reason| ProfileError::JudgeUnavailable {
        judge: judge.id().to_string(),
        reason,
    })?;
    Ok(QualityProfile {
        consistency: clamp01(scores.consistency),
        completeness: clamp01(scores.completeness),
        task_orientation: clamp01(scores.task_orientation),
        judge_id: judge.id().to_string(),
    })
}

pub fn assess_verifiability(
    pkg: &SkillPackage,
    runtime: &RuntimeRequirementProfile,
    judge: &dyn VerifiabilityJudge,
) -> Result<VerifiabilityProfile, ProfileError> {
    let v = judge
        .judge(pkg, runtime)
        .map_err(|reason| ProfileError::JudgeUnavailable {
            judge: judge.id().to_string(),
            reason,
        })?;
    Ok(VerifiabilityProfile::from_components(
        v.low_ambiguity_success,
        v.reproducible_sandbox,
        v.constructible_instances,
    ))
}

const STEP_VERBS: &[&str] = &[
    "add", "append", "apply", "avoid", "build", "call", "change", "check", "choose", "clone", "commit",
    "compare", "compile", "configure", "confirm", "connect", "convert", "copy", "create", "define",
    "delete", "deploy", "determine", "disable", "do", "download", "edit", "enable", "ensure", "enter",
    "execute", "export", "extract", "fetch", "fill", "find", "fix", "follow", "format", "generate",
    "identify", "import", "include", "initialize", "inspect", "install", "invoke", "keep", "launch",
    "list", "load", "locate", "log", "make", "merge", "modify", "monitor", "mount", "move", "navigate",
    "never", "note", "open", "parse", "pass", "patch", "pick", "place", "prefer", "prepare", "print",
    "provide", "pull", "push", "put", "read", "record", "reload", "remove", "rename", "replace",
    "restart", "retry", "return", "review", "run", "save", "scan", "search", "select", "send", "set",
    "sort", "split", "start", "stop", "submit", "switch", "tag", "test", "update", "upload", "use",
    "validate", "verify", "wait", "write",
];

fn list_item_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    R.get_or_init(|| Regex::new(r"^\s*(?:[-*+]|\d+[.)])\s+(.*)$").unwrap())
}

fn resource_ref_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    R.get_or_init(|| Regex::new(r"\b((?:scripts|references|assets)/[A-Za-z0-9._/-]*[A-Za-z0-9_-])").unwrap())
}

fn always_never_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    R.get_or_init(|| Regex::new(r"(?i)\b(always|never)\s+([a-z][a-z-]*)\s+([a-z0-9][a-z0-9_.-]*)").unwrap())
}

/// Body lines outside fenced code blocks.
fn prose_lines(body: &str) -> Vec<&str> {
    let mut in_fence = false;
    let mut out = Vec::new();
    for line in body.lines() {
        let t = line.trim_start();
        if t.starts_with("```") || t.starts_with("~~~") {
            in_fence = !in_fence;
            continue;
        }
        if !in_fence {
            out.push(line);
        }
    }
    out
}

fn is_imperative_step(line: &str) -> bool {
    let Some(c) = list_item_re().captures(line) else {
        return false;
    };
    let first = c[1]
        .split_whitespace()
        .next()
        .unwrap_or("")
        .trim_matches(|ch: char| !ch.is_ascii_alphabetic())
        .to_ascii_lowercase();
    STEP_VERBS.binary_search(&first.as_str()).is_ok()
}

/// Counts from the lexical quality rules, exposed for inspection and tests.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QualitySignals {
    pub prose_lines: usize,
    pub imperative_steps: usize,
    pub referenced_resources: BTreeSet<String>,
    pub duplicate_headings: usize,
    pub always_never_conflicts: usize,
}

pub fn quality_signals(pkg: &SkillPackage) -> QualitySignals {
    let prose = prose_lines(&pkg.manifest.raw_body);
    let mut signals = QualitySignals::default();
    let mut headings: HashMap<String, usize> = HashMap::new();
    let mut always = BTreeSet::new();
    let mut never = BTreeSet::new();
    for line in &prose {
        if line.trim().is_empty() {
            continue;
        }
        signals.prose_lines += 1;
        if is_imperative_step(line) {
            signals.imperative_steps += 1;
        }
        let t = line.trim_start();
        if t.starts_with('#') {
            let text = t.trim_start_matches('#').trim().to_lowercase();
            if !text.is_empty() {
                *headings.entry(text).or_default() += 1;
            }
        }
        for c in always_never_re().captures_iter(line) {
            let key = format!("{} {}", c[2].to_lowercase(), c[3].to_lowercase());
            if c[1].eq_ignore_ascii_case("always") {
                always.insert(key);
            } else {
                never.insert(key);
            }
        }
    }
    for c in resource_ref_re().captures_iter(&pkg.manifest.raw_body) {
        signals.referenced_resources.insert(c[1].to_string());
    }
    signals.duplicate_headings = headings.values().map(|n| n - 1).sum();
    signals.always_never_conflicts = always.intersection(&never).count();
    signals
}

/// Deterministic default judge.
///
/// * task_orientation: imperative list steps / non-blank prose lines.
/// * completeness: half for having any steps, half for the Jaccard overlap
///   between resource paths mentioned in the body and those present on disk.
/// * consistency: `1 / (1 + duplicate headings + always/never contradictions)`.
#[derive(Debug, Default, Clone, Copy)]
pub struct LexicalQualityJudge;

impl QualityJudge for LexicalQualityJudge {
    fn id(&self) -> &str {
        "lexical-v1"
    }

    fn judge(&self, pkg: &SkillPackage) -> Result<QualityScores, String> {
        let s = quality_signals(pkg);
        let task_orientation = if s.prose_lines == 0 {
            0.0
        } else {
            s.imperative_steps as f64 / s.prose_lines as f64
        };
        let actual: BTreeSet<String> = pkg.resources().map(str::to_string).collect();
        let union = s.referenced_resources.union(&actual).count();
        let overlap = if union == 0 {
            1.0
        } else {
            s.referenced_resources.intersection(&actual).count() as f64 / union as f64
        };
        let has_steps = if s.imperative_steps > 0 { 1.0 } else { 0.0 };
        Ok(QualityScores {
            consistency: 1.0 / (1 + s.duplicate_headings + s.always_never_conflicts) as f64,
            completeness: 0.5 * has_steps + 0.5 * overlap,
            task_orientation,
        })
    }
}

const SUCCESS_CUES: &[&str] = &[
    "verify", "verifies", "verified", "check", "checks", "test", "tests", "assert", "expect",
    "expected", "confirm", "validate", "passes", "succeeds", "exit code", "should return",
    "should output", "should print",
];

/// Deterministic default verifiability judge.
///
/// * low_ambiguity_success: the body names a check (verify, test, expected output, ...).
/// * reproducible_sandbox: no API keys, no MCP servers, no macOS/Windows assumption.
/// * constructible_instances: the package ships runnable material (a code block or a script).
#[derive(Debug, Default, Clone, Copy)]
pub struct LexicalVerifiabilityJudge;

impl VerifiabilityJudge for LexicalVerifiabilityJudge {
    fn id(&self) -> &str {
        "lexical-v1"
    }

    fn judge(
        &self,
        pkg: &SkillPackage,
        runtime: &RuntimeRequirementProfile,
    ) -> Result<VerifiabilityVerdict, String> {
        let lower = pkg.manifest.raw_body.to_lowercase();
        let low_ambiguity_success = SUCCESS_CUES.iter().any(|cue| contains_word(&lower, cue));
        let reproducible_sandbox = runtime.api_keys.is_empty()
            && runtime.mcp_servers.is_empty()
            && !runtime
                .os_assumptions
                .iter()
                .any(|o| o == "macos" || o == "windows");
        let body = &pkg.manifest.raw_body;
        let constructible_instances =
            !pkg.scripts.is_empty() || body.contains("```") || body.contains("~~~");
        Ok(VerifiabilityVerdict {
            low_ambiguity_success,
            reproducible_sandbox,
            constructible_instances,
        })
    }
}

fn contains_word(haystack: &str, needle: &str) -> bool {
    let mut from = 0;
    while let Some(pos) = haystack[from..].find(needle) {
        let start = from + pos;
        let end = start + needle.len();
        let before_ok = haystack[..start]
            .chars()
            .next_back()
            .is_none_or(|c| !c.is_alphanumeric());
        let after_ok = haystack[end..].chars().next().is_none_or(|c| !c.is_alphanumeric());
        if before_ok && after_ok {
            return true;
        }
        from = end;
    }
    false
}
