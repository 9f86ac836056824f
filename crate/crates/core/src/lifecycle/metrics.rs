use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LifecycleError, TrialRecord};

/// Pass/fail outcomes per task, one entry per run.
pub type Outcomes = BTreeMap<String, Vec<bool>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_task_scores: Outcomes,
    /// Mean over tasks of each task's pass rate.
    pub avg_at_k: f64,
    /// Largest number of runs seen for any task.
    pub k: usize,
    pub baseline_name: Option<String>,
    /// Per-task pass-rate difference in percentage points.
    #[serde(default)]
    pub deltas: BTreeMap<String, f64>,
    /// `avg_at_k` minus the baseline's, over the same tasks, in percentage points.
    pub delta_pp: Option<f64>,
}

fn task_mean(v: &[bool]) -> f64 {
    v.iter().filter(|&&b| b).count() as f64 / v.len() as f64
}

/// Final-attempt outcomes grouped by task. A trial passes when its verifier
/// reported no failures; a missing verdict counts as a fail.
pub fn outcomes_from_trials(trials: &[TrialRecord]) -> Outcomes {
    let mut out = Outcomes::new();
    for t in trials.iter().filter(|t| t.is_final_attempt) {
        out.entry(t.task.task_id.clone())
            .or_default()
            .push(t.evidence.as_ref().is_some_and(|e| e.all_passed()));
    }
    out
}

/// Final-attempt outcomes of a finished run, from `trials/*/trial.json`.
pub fn load_run_outcomes(run_dir: &Path) -> Result<Outcomes, LifecycleError> {
    let trials_dir = run_dir.join("trials");
    let mut trials = Vec::new();
    let entries = std::fs::read_dir(&trials_dir)
        .map_err(|e| LifecycleError::Metrics(format!("{}: {e}", trials_dir.display())))?;
    for entry in entries {
        let path = entry?.path().join("trial.json");
        if !path.is_file() {
            continue;
        }
        let text = std::fs::read_to_string(&path)?;
        let rec: TrialRecord = serde_json::from_str(&text)
            .map_err(|e| LifecycleError::Metrics(format!("{}: {e}", path.display())))?;
        trials.push(rec);
    }
    trials.sort_by(|a, b| a.trial_id.cmp(&b.trial_id));
    Ok(outcomes_from_trials(&trials))
}

/// avg@k over `outcomes`, with deltas against `baseline` when given.
///
/// Every task needs at least one outcome, and every task must also appear in
/// the baseline.
pub fn report_metrics(outcomes: &Outcomes, baseline: Option<(&str, &MetricsReport)>) -> Result<MetricsReport, LifecycleError> {
    if outcomes.is_empty() {
        return Err(LifecycleError::Metrics("no task outcomes".into()));
    }
    if let Some((task, _)) = outcomes.iter().find(|(_, v)| v.is_empty()) {
        return Err(LifecycleError::Metrics(format!("task `{task}` has no outcomes")));
    }
    let means: BTreeMap<&str, f64> = outcomes.iter().map(|(t, v)| (t.as_str(), task_mean(v))).collect();
    let avg_at_k = means.values().sum::<f64>() / means.len() as f64;
    let mut report = MetricsReport {
        per_task_scores: outcomes.clone(),
        avg_at_k,
        k: outcomes.values().map(Vec::len).max().unwrap_or(0),
        baseline_name: None,
        deltas: BTreeMap::new(),
        delta_pp: None,
    };
    if let Some((name, base)) = baseline {
        let mut base_sum = 0.0;
        for (task, mean) in &means {
            let b = base
                .per_task_scores
                .get(*task)
                .filter(|v| !v.is_empty())
                .ok_or_else(|| LifecycleError::MissingBaselineTask(task.to_string()))?;
            let bm = task_mean(b);
            base_sum += bm;
            report.deltas.insert(task.to_string(), (mean - bm) * 100.0);
        }
        report.baseline_name = Some(name.to_string());
        report.delta_pp = Some((avg_at_k - base_sum / means.len() as f64) * 100.0);
    }
    Ok(report)
}

/// Concatenates per-task outcomes, e.g. from repeated runs of one stream.
pub fn merge_outcomes<'a>(parts: impl IntoIterator<Item = &'a Outcomes>) -> Outcomes {
    let mut out = Outcomes::new();
    for p in parts {
        for (task, v) in p {
            out.entry(task.clone()).or_default().extend(v);
        }
    }
    out
}
