use super::simulate::{attribute_one, evolve_simply, recommend_first, ScriptedEnvironment};
use super::*;
use crate::gateway::{ScriptStep, ScriptedExecutor};
use crate::store::testing::write_skill;
use crate::store::SteppingClock;
use chrono::{TimeZone, Utc};

fn clock() -> SteppingClock {
    SteppingClock::new(Utc.with_ymd_and_hms(2026, 5, 1, 8, 0, 0).unwrap(), chrono::Duration::seconds(1))
}

fn tasks(n: usize) -> Vec<TaskSpec> {
    (1..=n)
        .map(|i| TaskSpec {
            task_id: format!("task-{i}"),
            instruction: format!("Do thing {i}."),
            environment_ref: String::new(),
            verifier_ref: String::new(),
        })
        .collect()
}

struct Agents {
    rec: ScriptedExecutor,
    attr: ScriptedExecutor,
    evo: ScriptedExecutor,
}

impl Agents {
    fn simulated() -> Self {
        Self {
            rec: ScriptedExecutor::from_fn(recommend_first(2)),
            attr: ScriptedExecutor::from_fn(attribute_one()),
            evo: ScriptedExecutor::from_fn(evolve_simply()),
        }
    }

    fn backends<'a>(&'a self, env: &'a dyn TrialEnvironment) -> Backends<'a> {
        Backends {
            recommender: &self.rec,
            attributor: &self.attr,
            evolver: &self.evo,
            environment: env,
        }
    }
}

#[test]
fn due_schedule() {
    let due: Vec<usize> = (1..=12).filter(|&n| evolution_due(n, 4)).collect();
    assert_eq!(due, vec![4, 8, 12]);
    assert!(!evolution_due(3, 4));
    assert!(evolution_due(5, 1));
    assert!(!evolution_due(0, 1));
}

#[test]
fn baseline_has_no_recommendation_or_evolution() {
    let tmp = tempfile::tempdir().unwrap();
    let agents = Agents::simulated();
    let env = ScriptedEnvironment::constant_reward(1.0);
    let cfg = ExperimentConfig::new(ExperimentMode::Baseline);
    let out = run_experiment(&tasks(5), &cfg, agents.backends(&env), tmp.path(), &clock()).unwrap();
    assert_eq!(out.summary.recommendations, 0);
    assert!(out.batches.is_empty());
    assert_eq!(agents.rec.invocations() + agents.attr.invocations(), 0);
    assert!(env.seen().iter().all(|s| s.instruction.starts_with("Do thing") && s.skills.is_empty()));
    assert_eq!(out.metrics.avg_at_k, 1.0);
    assert!(tmp.path().join("metrics.json").exists());
}

#[test]
fn online_stream_evolves_in_batches() {
    let tmp = tempfile::tempdir().unwrap();
    let agents = Agents::simulated();
    let env = ScriptedEnvironment::constant_reward(1.0);
    let mut cfg = ExperimentConfig::new(ExperimentMode::Online);
    cfg.runtime_library_root = Some(tmp.path().join("library"));
    cfg.trial_parallelism = 3;
    let run = tmp.path().join("run");
    let out = run_experiment(&tasks(12), &cfg, agents.backends(&env), &run, &clock()).unwrap();

    assert_eq!(out.batches.len(), 3);
    assert_eq!(out.summary.checkpoints.len(), 3);
    assert_eq!(out.summary.attributions, 12);
    // Batch 1 creates learned-1 from four no-skill successes.
    assert_eq!(out.batches[0].created, vec!["learned-1"]);
    let seen = env.seen();
    for s in &seen {
        let idx: usize = s.task_id.trim_start_matches("task-").parse().unwrap();
        if idx <= 4 {
            assert!(s.skills.is_empty(), "{s:?}");
        } else {
            assert!(s.skills.contains(&"learned-1".to_string()), "{s:?}");
        }
    }
    // Batch 2 edits the skill trials 5-8 used.
    assert_eq!(out.batches[1].edited, vec!["learned-1"]);
    // Trials in one wave between barriers see one library hash.
    let hashes: Vec<_> = out.trials.iter().map(|t| t.library_hash.clone().unwrap()).collect();
    assert_eq!(hashes[0], hashes[3]);
    assert_ne!(hashes[3], hashes[4]);
    assert_eq!(hashes[4], hashes[7]);
    assert_ne!(hashes[7], hashes[8]);
    for d in ["trials/0001-task-1-a1/trial.json", "trials/0005-task-5-a1/recommendation/outcome.json", "trials/0005-task-5-a1/attribution/subtasks.json", "trials/0005-task-5-a1/verifier/evidence.json", "checkpoints/3/learned-1/SKILL.md", "run.json"] {
        assert!(run.join(d).exists(), "{d}");
    }
}

#[test]
fn retries_attribute_only_final_attempts() {
    let tmp = tempfile::tempdir().unwrap();
    let agents = Agents::simulated();
    let env = ScriptedEnvironment::constant_reward(0.0).with_attempts(2);
    let mut cfg = ExperimentConfig::new(ExperimentMode::Online);
    cfg.runtime_library_root = Some(tmp.path().join("library"));
    cfg.evolution_batch_size = 2;
    let out = run_experiment(&tasks(3), &cfg, agents.backends(&env), &tmp.path().join("run"), &clock()).unwrap();
    assert_eq!(out.trials.len(), 6);
    assert_eq!(out.summary.final_trials, 3);
    assert_eq!(agents.attr.invocations(), 3);
    for t in &out.trials {
        assert_eq!(t.attribution.is_some(), t.is_final_attempt);
        assert_eq!(t.state, TrialState::Closed);
    }
    assert_eq!(out.batches.len(), 1);
    assert_eq!(out.summary.unevolved_units, 1);
    let pending = crate::evolution::read_units(&tmp.path().join("run").join(PENDING_UNITS_FILE)).unwrap();
    assert_eq!(pending.len(), 1);
    assert_eq!(pending[0].trial_id, "0003-task-3-a2");
}

#[test]
fn offline_transfer_recommends_from_frozen_copy() {
    let tmp = tempfile::tempdir().unwrap();
    let built = tmp.path().join("built");
    write_skill(&built, "alpha", "Do alpha.\n", &[]);
    let before = crate::fsutil::tree_hash(&built).unwrap();
    let agents = Agents::simulated();
    let env = ScriptedEnvironment::constant_reward(1.0);
    let mut cfg = ExperimentConfig::new(ExperimentMode::OfflineTransfer);
    cfg.candidate_library_root = Some(built.clone());
    let out = run_experiment(&tasks(4), &cfg, agents.backends(&env), &tmp.path().join("run"), &clock()).unwrap();
    assert_eq!(out.summary.recommendations, 4);
    assert!(out.batches.is_empty());
    assert_eq!(agents.attr.invocations(), 0);
    assert!(env.seen().iter().all(|s| s.skills == vec!["alpha"]));
    assert_eq!(crate::fsutil::tree_hash(&built).unwrap(), before);
    assert!(agents.rec.calls()[0].working_root.ends_with("frozen_library"));
}

#[test]
fn online_with_empty_library_selects_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let agents = Agents::simulated();
    let env = ScriptedEnvironment::constant_reward(1.0);
    let mut cfg = ExperimentConfig::new(ExperimentMode::Online);
    cfg.runtime_library_root = Some(tmp.path().join("library"));
    let out = run_experiment(&tasks(1), &cfg, agents.backends(&env), &tmp.path().join("run"), &clock()).unwrap();
    let rec = out.trials[0].recommendation.as_ref().unwrap();
    assert_eq!(rec.mode, crate::recommend::RecommendationMode::NoneSelected);
}

#[test]
fn attribution_failure_closes_with_marker() {
    let tmp = tempfile::tempdir().unwrap();
    let agents = Agents {
        attr: ScriptedExecutor::from_fn(|_| ScriptStep::Output("not json".into())),
        ..Agents::simulated()
    };
    let env = ScriptedEnvironment::constant_reward(1.0);
    let mut cfg = ExperimentConfig::new(ExperimentMode::Online);
    cfg.runtime_library_root = Some(tmp.path().join("library"));
    cfg.evolution_batch_size = 1;
    let out = run_experiment(&tasks(1), &cfg, agents.backends(&env), &tmp.path().join("run"), &clock()).unwrap();
    let t = &out.trials[0];
    assert_eq!(t.state, TrialState::Closed);
    assert!(t.attribution.is_none());
    assert_eq!(t.units_enqueued, 0);
    assert_eq!(t.failures[0].stage, TrialStage::Attribution);
    assert_eq!(out.batches.len(), 1);
    assert_eq!(agents.evo.invocations(), 0);
}

#[test]
fn offline_build_uses_oracle_and_emits_library() {
    let tmp = tempfile::tempdir().unwrap();
    let oracle = tmp.path().join("oracle");
    std::fs::create_dir_all(oracle.join("solution")).unwrap();
    let oracle_for_env = oracle.clone();
    let env = ScriptedEnvironment::new(move |_| VerifierArtifact {
        raw: r#"{"total": 4, "passed": 4}"#.into(),
        oracle_root: Some(oracle_for_env.clone()),
    });
    let agents = Agents::simulated();
    let cfg = ExperimentConfig::from_yaml(&format!(
        "mode: offline_build\nruntime_library_root: {}\nevidence_mode: offline_oracle\nevolution_batch_size: 2\n",
        tmp.path().join("lib").display()
    ))
    .unwrap();
    let run = tmp.path().join("run");
    let out = run_experiment(&tasks(4), &cfg, agents.backends(&env), &run, &clock()).unwrap();
    let report = out.trials[0].attribution.as_ref().unwrap();
    assert_eq!(report.ground_truth_path.as_deref(), Some(oracle.as_path()));
    assert!(agents.attr.calls()[0].user_text.contains(&oracle.display().to_string()));
    assert_eq!(out.summary.final_library.as_deref(), Some(run.join("final_library").as_path()));
    assert!(run.join("final_library/learned-1/SKILL.md").exists());
    assert_eq!(out.summary.checkpoints.len(), 2);
}

#[test]
fn missing_oracle_is_a_verifier_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let env = ScriptedEnvironment::constant_reward(1.0);
    let agents = Agents::simulated();
    let mut cfg = ExperimentConfig::new(ExperimentMode::OfflineBuild);
    cfg.runtime_library_root = Some(tmp.path().join("lib"));
    let out = run_experiment(&tasks(1), &cfg, agents.backends(&env), &tmp.path().join("run"), &clock()).unwrap();
    assert_eq!(out.trials[0].failures[0].stage, TrialStage::Verifier);
    assert!(!out.trials[0].passed());
    assert_eq!(out.metrics.avg_at_k, 0.0);
}
