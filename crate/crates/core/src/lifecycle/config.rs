use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::LifecycleError;
use crate::attribution::EvidenceMode;
use crate::profile::TaskSpec;
use crate::recommend::DEFAULT_TOP_K;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentMode {
    /// No skills, no evolution.
    Baseline,
    /// Recommend from and evolve one library during the stream.
    Online,
    /// Like online, with oracle evidence, emitting the final library.
    OfflineBuild,
    /// Recommend from a frozen copy of a built library; never evolve.
    OfflineTransfer,
}

impl ExperimentMode {
    pub fn recommends(self) -> bool {
        self != Self::Baseline
    }

    pub fn evolves(self) -> bool {
        matches!(self, Self::Online | Self::OfflineBuild)
    }
}

fn default_batch() -> usize {
    4
}
fn default_top_k() -> usize {
    DEFAULT_TOP_K
}
fn default_parallelism() -> usize {
    1
}
fn default_evidence() -> EvidenceMode {
    EvidenceMode::Online
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: ExperimentMode,
    #[serde(default)]
    pub candidate_library_root: Option<PathBuf>,
    #[serde(default)]
    pub runtime_library_root: Option<PathBuf>,
    #[serde(default = "default_batch")]
    pub evolution_batch_size: usize,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_evidence")]
    pub evidence_mode: EvidenceMode,
    #[serde(default = "default_parallelism")]
    pub trial_parallelism: usize,
}

impl ExperimentConfig {
    pub fn new(mode: ExperimentMode) -> Self {
        Self {
            mode,
            candidate_library_root: None,
            runtime_library_root: None,
            evolution_batch_size: default_batch(),
            top_k: default_top_k(),
            evidence_mode: if mode == ExperimentMode::OfflineBuild {
                EvidenceMode::OfflineOracle
            } else {
                EvidenceMode::Online
            },
            trial_parallelism: default_parallelism(),
        }
    }

    pub fn from_yaml(text: &str) -> Result<Self, LifecycleError> {
        let cfg: Self = serde_yaml::from_str(text).map_err(|e| LifecycleError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a YAML file. Relative library roots resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self, LifecycleError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LifecycleError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_yaml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for root in [&mut cfg.candidate_library_root, &mut cfg.runtime_library_root]
            .into_iter()
            .flatten()
        {
            if root.is_relative() {
                *root = base.join(&*root);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), LifecycleError> {
        let bad = |m: &str| Err(LifecycleError::Config(m.to_string()));
        if self.evolution_batch_size == 0 {
            return bad("evolution_batch_size must be at least 1");
        }
        if self.top_k == 0 {
            return bad("top_k must be at least 1");
        }
        if self.trial_parallelism == 0 {
            return bad("trial_parallelism must be at least 1");
        }
        match self.mode {
            ExperimentMode::Baseline => {}
            ExperimentMode::Online | ExperimentMode::OfflineBuild => {
                let Some(runtime) = &self.runtime_library_root else {
                    return bad("runtime_library_root is required when evolving");
                };
                if self.candidate_library_root.as_ref().is_some_and(|c| c != runtime) {
                    return bad("candidate_library_root must equal runtime_library_root when evolving");
                }
                if self.mode == ExperimentMode::OfflineBuild && self.evidence_mode != EvidenceMode::OfflineOracle {
                    return bad("offline_build requires evidence_mode: offline_oracle");
                }
            }
            ExperimentMode::OfflineTransfer => {
                if self.candidate_library_root.is_none() {
                    return bad("offline_transfer requires candidate_library_root");
                }
            }
        }
        Ok(())
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TaskFile {
    Many(Vec<TaskSpec>),
    One(TaskSpec),
}

/// Reads an ordered task list: YAML or JSON holding one task or a list, or
/// JSON Lines when the extension is `.jsonl` or `.ndjson`.
///
/// Task ids must be unique and instructions non-empty.
pub fn read_tasks(path: &Path) -> Result<Vec<TaskSpec>, LifecycleError> {
    let fail = |m: String| LifecycleError::Config(format!("{}: {m}", path.display()));
    let text = std::fs::read_to_string(path).map_err(|e| fail(e.to_string()))?;
    let lines = matches!(path.extension().and_then(|e| e.to_str()), Some("jsonl" | "ndjson"));
    let tasks: Vec<TaskSpec> = if lines {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| fail(format!("line {}: {e}", i + 1))))
            .collect::<Result<_, _>>()?
    } else {
        match serde_yaml::from_str(&text).map_err(|e| fail(e.to_string()))? {
            TaskFile::Many(v) => v,
            TaskFile::One(t) => vec![t],
        }
    };
    let mut seen = std::collections::BTreeSet::new();
    for t in &tasks {
        if t.instruction.trim().is_empty() {
            return Err(fail(format!("task `{}` has an empty instruction", t.task_id)));
        }
        if !seen.insert(t.task_id.as_str()) {
            return Err(fail(format!("task id `{}` appears twice", t.task_id)));
        }
    }
    Ok(tasks)
}
