//! Execution-readiness profiles for skill packages.

mod judge;
mod runtime;

use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

pub use judge::{
    assess_quality, assess_verifiability, quality_signals, LexicalQualityJudge,
    LexicalVerifiabilityJudge, QualityJudge, QualityProfile, QualityScores, QualitySignals,
    VerifiabilityJudge, VerifiabilityProfile, VerifiabilityVerdict,
};
pub use runtime::{profile_runtime_requirements, runtime_requirements_with_warnings, RuntimeRequirementProfile};

use crate::store::{parse_skill_package, SkillPackage, MANIFEST_FILE};

#[derive(Debug, thiserror::Error)]
pub enum ProfileError {
    #[error("judge `{judge}` unavailable: {reason}")]
    JudgeUnavailable { judge: String, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A benchmark task as the orchestrator sees it. Environment and verifier are opaque handles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub instruction: String,
    #[serde(default)]
    pub environment_ref: String,
    #[serde(default)]
    pub verifier_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillProfileRecord {
    pub skill_name: String,
    pub runtime: RuntimeRequirementProfile,
    pub quality: QualityProfile,
    pub verifiability: VerifiabilityProfile,
    pub profiled_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Judges used for a profiling run.
pub struct Judges<'a> {
    pub quality: &'a dyn QualityJudge,
    pub verifiability: &'a dyn VerifiabilityJudge,
}

impl Default for Judges<'static> {
    fn default() -> Self {
        Judges {
            quality: &LexicalQualityJudge,
            verifiability: &LexicalVerifiabilityJudge,
        }
    }
}

pub fn profile_package(
    pkg: &SkillPackage,
    judges: &Judges<'_>,
    profiled_at: DateTime<Utc>,
) -> Result<SkillProfileRecord, ProfileError> {
    let (runtime, warnings) = runtime_requirements_with_warnings(pkg);
    let quality = assess_quality(pkg, judges.quality)?;
    let verifiability = assess_verifiability(pkg, &runtime, judges.verifiability)?;
    Ok(SkillProfileRecord {
        skill_name: pkg.name().to_string(),
        runtime,
        quality,
        verifiability,
        profiled_at,
        warnings,
    })
}

/// How package directories are found under a corpus root.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Discovery {
    /// Every non-hidden immediate subdirectory is a package directory.
    #[default]
    Children,
    /// Any directory containing `SKILL.md`, at any depth. Packages do not nest.
    Recursive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileFailure {
    pub dir: PathBuf,
    pub error: String,
}

#[derive(Debug, Default)]
pub struct CorpusProfile {
    /// Sorted by skill name, then directory.
    pub records: Vec<SkillProfileRecord>,
    /// Sorted by directory.
    pub failures: Vec<ProfileFailure>,
}

impl CorpusProfile {
    pub fn package_dirs(&self) -> usize {
        self.records.len() + self.failures.len()
    }
}

pub fn discover_packages(root: &Path, discovery: Discovery) -> io::Result<Vec<PathBuf>> {
    let hidden = |e: &walkdir::DirEntry| e.depth() > 0 && e.file_name().to_string_lossy().starts_with('.');
    let mut dirs = Vec::new();
    match discovery {
        Discovery::Children => {
            for entry in WalkDir::new(root).min_depth(1).max_depth(1) {
                let entry = entry.map_err(io::Error::other)?;
                if !hidden(&entry) && (entry.file_type().is_dir() || entry.path_is_symlink()) {
                    dirs.push(entry.into_path());
                }
            }
        }
        Discovery::Recursive => {
            let mut it = WalkDir::new(root).min_depth(1).into_iter();
            while let Some(entry) = it.next() {
                let entry = entry.map_err(io::Error::other)?;
                if !entry.file_type().is_dir() {
                    continue;
                }
                if hidden(&entry) {
                    it.skip_current_dir();
                    continue;
                }
                if entry.path().join(MANIFEST_FILE).exists() {
                    dirs.push(entry.into_path());
                    it.skip_current_dir();
                }
            }
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// Profiles every package directory under `root` in parallel.
///
/// Exactly one record or one failure is produced per package directory.
/// Output order does not depend on scheduling.
pub fn profile_corpus(
    root: &Path,
    discovery: Discovery,
    judges: &Judges<'_>,
    profiled_at: DateTime<Utc>,
) -> io::Result<CorpusProfile> {
    let dirs = discover_packages(root, discovery)?;
    let results: Vec<Result<SkillProfileRecord, ProfileFailure>> = dirs
        .par_iter()
        .map(|dir| {
            let fail = |error: String| ProfileFailure {
                dir: dir.clone(),
                error,
            };
            let pkg = parse_skill_package(dir).map_err(|e| fail(e.to_string()))?;
            profile_package(&pkg, judges, profiled_at).map_err(|e| fail(e.to_string()))
        })
        .collect();
    let mut out = CorpusProfile::default();
    for r in results {
        match r {
            Ok(rec) => out.records.push(rec),
            Err(f) => out.failures.push(f),
        }
    }
    // `dirs` was sorted, and collect() preserves order, so ties on name keep directory order.
    out.records.sort_by(|a, b| a.skill_name.cmp(&b.skill_name));
    Ok(out)
}

/// One JSON document per line.
pub fn write_ndjson<T: Serialize>(items: &[T], mut out: impl Write) -> io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
