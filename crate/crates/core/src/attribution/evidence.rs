use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::AttributionError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceMode {
    Online,
    OfflineOracle,
}

/// Layout of an offline oracle directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OraclePaths {
    pub root: PathBuf,
    pub solution_dir: PathBuf,
    pub tests_dir: PathBuf,
    pub stdout_file: PathBuf,
}

impl OraclePaths {
    pub fn at(root: impl Into<PathBuf>) -> Self {
        let root = root.into();
        Self {
            solution_dir: root.join("solution"),
            tests_dir: root.join("verifier").join("tests"),
            stdout_file: root.join("verifier").join("test-stdout.txt"),
            root,
        }
    }
}

/// Test counts from the verifier. `passed + failed == total` always holds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifierEvidence {
    pub mode: EvidenceMode,
    pub total: u64,
    pub passed: u64,
    pub failed: u64,
    pub oracle_paths: Option<OraclePaths>,
}

impl VerifierEvidence {
    /// A scalar reward counts as one test: passed iff it is exactly 1.
    pub fn from_reward(reward: f64) -> Self {
        let passed = u64::from(reward == 1.0);
        Self::online(1, passed).expect("1 >= passed")
    }

    pub fn online(total: u64, passed: u64) -> Option<Self> {
        (passed <= total).then(|| Self {
            mode: EvidenceMode::Online,
            total,
            passed,
            failed: total - passed,
            oracle_paths: None,
        })
    }

    pub fn with_oracle(mut self, paths: OraclePaths) -> Self {
        self.mode = EvidenceMode::OfflineOracle;
        self.oracle_paths = Some(paths);
        self
    }

    pub fn all_passed(&self) -> bool {
        self.failed == 0 && self.total > 0
    }
}

fn unreadable(reason: impl Into<String>) -> AttributionError {
    AttributionError::UnreadableEvidence(reason.into())
}

fn counts(total: Option<u64>, passed: Option<u64>, failed: Option<u64>) -> Result<VerifierEvidence, AttributionError> {
    let (total, passed) = match (total, passed, failed) {
        (Some(t), Some(p), f) => {
            if f.is_some_and(|f| p.checked_add(f) != Some(t)) {
                return Err(unreadable(format!("passed {p} + failed {f:?} != total {t}")));
            }
            (t, p)
        }
        (Some(t), None, Some(f)) => (t, t.checked_sub(f).ok_or_else(|| unreadable("failed exceeds total"))?),
        (None, Some(p), Some(f)) => (p.checked_add(f).ok_or_else(|| unreadable("count overflow"))?, p),
        _ => return Err(unreadable("need at least two of total, passed, failed")),
    };
    VerifierEvidence::online(total, passed).ok_or_else(|| unreadable(format!("passed {passed} exceeds total {total}")))
}

fn reward(v: f64) -> Result<VerifierEvidence, AttributionError> {
    if v.is_finite() {
        Ok(VerifierEvidence::from_reward(v))
    } else {
        Err(unreadable("reward is not a finite number"))
    }
}

fn uint(obj: &serde_json::Map<String, Value>, key: &str) -> Option<u64> {
    obj.get(key).and_then(Value::as_u64)
}

fn from_json(v: &Value) -> Result<VerifierEvidence, AttributionError> {
    match v {
        Value::Number(n) => reward(n.as_f64().unwrap_or(f64::NAN)),
        Value::Bool(b) => Ok(VerifierEvidence::from_reward(if *b { 1.0 } else { 0.0 })),
        Value::Object(obj) => {
            // CTRF: results.summary.{tests, passed}
            if let Some(summary) = obj.get("results").and_then(|r| r.get("summary")).and_then(Value::as_object) {
                if let (Some(t), Some(p)) = (uint(summary, "tests"), uint(summary, "passed")) {
                    return counts(Some(t), Some(p), None);
                }
            }
            let (t, p, f) = (uint(obj, "total"), uint(obj, "passed"), uint(obj, "failed"));
            if [t, p, f].iter().filter(|x| x.is_some()).count() >= 2 {
                return counts(t, p, f);
            }
            if let Some(summary) = obj.get("summary").filter(|s| s.is_object()) {
                return from_json(summary);
            }
            if let Some(r) = obj.get("reward").or_else(|| obj.get("rewards").and_then(|r| r.get("reward"))) {
                return match r.as_f64() {
                    Some(x) => reward(x),
                    None => Err(unreadable("reward is not a number")),
                };
            }
            Err(unreadable("no counts or reward in report"))
        }
        _ => Err(unreadable("unsupported JSON value")),
    }
}

fn pytest_summary(text: &str) -> Option<VerifierEvidence> {
    static LINE: OnceLock<Regex> = OnceLock::new();
    static COUNT: OnceLock<Regex> = OnceLock::new();
    let line = LINE.get_or_init(|| Regex::new(r"(?m)^=+ (.+?) =+\s*$").unwrap());
    let count = COUNT.get_or_init(|| Regex::new(r"(\d+) (passed|failed|errors?)\b").unwrap());
    let summary = line
        .captures_iter(text)
        .filter_map(|c| c.get(1))
        .filter(|m| count.is_match(m.as_str()))
        .last()?;
    let (mut passed, mut failed) = (0u64, 0u64);
    for c in count.captures_iter(summary.as_str()) {
        let n: u64 = c[1].parse().ok()?;
        match &c[2] {
            "passed" => passed += n,
            _ => failed += n,
        }
    }
    VerifierEvidence::online(passed.checked_add(failed)?, passed)
}

/// Reads a verifier artifact: a scalar reward, a JSON count report (plain
/// counts, CTRF, or a `summary` object), or pytest console output.
///
/// Passing `oracle` marks the evidence as offline-oracle.
pub fn normalize_verifier_evidence(raw: &str, oracle: Option<OraclePaths>) -> Result<VerifierEvidence, AttributionError> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(unreadable("empty verifier artifact"));
    }
    let ev = match serde_json::from_str::<Value>(trimmed) {
        Ok(v) => from_json(&v)?,
        Err(_) => match trimmed.parse::<f64>() {
            Ok(x) => reward(x)?,
            Err(_) => pytest_summary(trimmed).ok_or_else(|| unreadable("no counts and no reward found"))?,
        },
    };
    Ok(match oracle {
        Some(p) => ev.with_oracle(p),
        None => ev,
    })
}

/// [`normalize_verifier_evidence`] on a file.
pub fn read_verifier_evidence(path: &Path, oracle: Option<OraclePaths>) -> Result<VerifierEvidence, AttributionError> {
    let text = std::fs::read_to_string(path).map_err(|e| unreadable(format!("{}: {e}", path.display())))?;
    normalize_verifier_evidence(&text, oracle)
}
