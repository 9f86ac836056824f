use super::*;
use crate::gateway::{ScriptStep, ScriptedExecutor};
use serde_json::json;

fn subtask(goal: &str, attribution: &str, skill: Option<&str>, refs: Value) -> Value {
    json!({
        "goal": goal,
        "summary": format!("worked on {goal}"),
        "exploration": if attribution == "success_skill_used_with_extra_exploration" { json!("had to pass --force") } else { Value::Null },
        "exploration_reason": "needed beyond the skill",
        "judge": "environment",
        "judge_reason": "command exit status",
        "attribution": attribution,
        "attribution_reason": "see summary",
        "skill_linked": skill,
        "skill_refs": refs,
    })
}

fn skill_ref(path: &str, start: Value, end: Value) -> Value {
    json!({"file_path": path, "start_line": start, "end_line": end, "capability": "enable site", "used_for": "vhost setup"})
}

fn forum_fixture() -> Value {
    let goals = [
        ("install dependencies", "success_no_skill_seen"),
        ("configure database", "success_skill_used_with_extra_exploration"),
        ("build assets", "success_no_skill_seen"),
        ("patch plugin loader", "success_viewed_skill_but_not_used"),
        ("run migrations", "success_no_skill_seen"),
        ("fix flaky upload test", "fail_agent_limit"),
    ];
    let subtasks: Vec<Value> = goals
        .iter()
        .map(|(g, a)| {
            if *a == "success_skill_used_with_extra_exploration" {
                subtask(g, a, Some("db-setup"), json!([skill_ref("SKILL.md", json!(3), json!(9))]))
            } else {
                subtask(g, a, None, json!([]))
            }
        })
        .collect();
    json!({ "subtasks": subtasks })
}

fn evidence() -> VerifierEvidence {
    normalize_verifier_evidence(r#"{"total": 427, "passed": 421}"#, None).unwrap()
}

fn request(ev: VerifierEvidence) -> DistillRequest {
    DistillRequest::new("t1", "/work", SessionRef::new("solver-1"), vec!["db-setup".into()], ev)
}

#[test]
fn enums_round_trip() {
    for k in AttributionKind::ALL {
        let s = serde_json::to_value(k).unwrap();
        assert_eq!(s, json!(k.as_str()));
        assert_eq!(serde_json::from_value::<AttributionKind>(s).unwrap(), k);
    }
    let succ: Vec<_> = AttributionKind::ALL.iter().filter(|k| k.is_success()).collect();
    assert_eq!(succ.len(), 3);
    assert!(succ.iter().all(|k| k.as_str().starts_with("success_")));
    for j in JudgeKind::ALL {
        assert_eq!(serde_json::from_value::<JudgeKind>(serde_json::to_value(j).unwrap()).unwrap(), j);
    }
}

#[test]
fn valid_linked_ref() {
    let doc = json!({"subtasks": [subtask(
        "serve site",
        "success_skill_used_with_extra_exploration",
        Some("ubuntu-apache-vhost"),
        json!([skill_ref("SKILL.md", json!(14), json!(20))]),
    )]});
    let s = validate_subtasks(&doc, &["ubuntu-apache-vhost"]).unwrap();
    assert_eq!(s[0].skill_refs[0].start_line, Some(14));
}

#[test]
fn invalid_documents() {
    let avail = ["a"];
    let one = |s: Value| json!({ "subtasks": [s] });
    let refs = |p: &str| json!([skill_ref(p, Value::Null, Value::Null)]);
    let cases: Vec<(Value, fn(&AttributionError) -> bool)> = vec![
        (one(subtask("g", "success_no_skill_seen", None, refs("SKILL.md"))), |e| matches!(e, AttributionError::RefWithoutLink { index: 0 })),
        (one(subtask("g", "success_no_skill_seen", Some("zzz"), json!([]))), |e| matches!(e, AttributionError::UnknownLinkedSkill { .. })),
        (one(subtask("g", "success_no_skill_seen", Some("a"), refs("/etc/passwd"))), |e| matches!(e, AttributionError::AbsoluteRefPath { .. })),
        (one(subtask("g", "success_no_skill_seen", Some("a"), refs("../b/SKILL.md"))), |e| matches!(e, AttributionError::TraversalRefPath { .. })),
        (one(subtask("g", "success_no_skill_seen", Some("a"), json!([skill_ref("x", json!(5), json!(2))]))), |e| matches!(e, AttributionError::LineRange { .. })),
        (one(subtask("g", "success_no_skill_seen", Some("a"), json!([skill_ref("x", json!(5), Value::Null)]))), |e| matches!(e, AttributionError::LineRange { .. })),
        (json!({"subtasks": []}), |e| matches!(e, AttributionError::SchemaViolation(_))),
    ];
    for (doc, ok) in cases {
        let err = validate_subtasks(&doc, &avail).unwrap_err();
        assert!(ok(&err), "{doc} -> {err:?}");
    }
    let mut empty_expl = subtask("g", "success_no_skill_seen", None, json!([]));
    empty_expl["exploration"] = json!("");
    assert!(matches!(validate_subtasks(&one(empty_expl), &avail), Err(AttributionError::SchemaViolation(_))));
}

#[test]
fn distills_six_subtasks_online() {
    let exec = ScriptedExecutor::new([ScriptStep::Json(forum_fixture())]);
    let tmp = tempfile::tempdir().unwrap();
    let mut req = request(evidence());
    req.artifact_dir = Some(tmp.path().to_path_buf());
    let report = distill_trajectory(&req, &exec, &Gateway::default()).unwrap();
    assert_eq!(report.subtasks.len(), 6);
    assert_eq!(report.subtasks[5].attribution, AttributionKind::FailAgentLimit);
    assert_eq!(report.ground_truth_path, None);
    let call = &exec.calls()[0];
    assert_eq!(call.session.as_deref(), Some("solver-1"));
    assert!(call.user_text.contains("427"));
    assert!(!call.user_text.contains("oracle"));
    for f in ["subtasks.json", "evidence.json", "report.json", "output.json"] {
        assert!(tmp.path().join(f).exists(), "{f}");
    }
    let written: Value = serde_json::from_slice(&std::fs::read(tmp.path().join("subtasks.json")).unwrap()).unwrap();
    assert!(validate_subtasks(&written, &["db-setup"]).is_ok());
}

#[test]
fn oracle_mode_attaches_path() {
    let exec = ScriptedExecutor::new([ScriptStep::Json(forum_fixture())]);
    let ev = evidence().with_oracle(OraclePaths::at("/gt/task-1"));
    let report = distill_trajectory(&request(ev), &exec, &Gateway::default()).unwrap();
    assert_eq!(report.ground_truth_path.as_deref(), Some(Path::new("/gt/task-1")));
    assert!(exec.calls()[0].user_text.contains("/gt/task-1"));
}

#[test]
fn zero_subtasks_is_validation_error() {
    let exec = ScriptedExecutor::new((0..3).map(|_| ScriptStep::Json(json!({"subtasks": []}))));
    match distill_trajectory(&request(evidence()), &exec, &Gateway::default()) {
        Err(AttributionError::SubtaskValidation { attempts: 3, diagnostics }) => {
            assert!(diagnostics.iter().any(|d| d.starts_with("/subtasks")), "{diagnostics:?}")
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn malformed_output_exhausts() {
    let exec = ScriptedExecutor::new((0..3).map(|_| ScriptStep::Output("not json".into())));
    assert!(matches!(
        distill_trajectory(&request(evidence()), &exec, &Gateway::default()),
        Err(AttributionError::ExhaustedRetries { attempts: 3, .. })
    ));
}

#[test]
fn missing_session() {
    let exec = ScriptedExecutor::new([ScriptStep::SessionNotFound]);
    assert!(matches!(
        distill_trajectory(&request(evidence()), &exec, &Gateway::default()),
        Err(AttributionError::SessionNotFound(id)) if id == "solver-1"
    ));
}

#[test]
fn warnings_for_coverage_and_consistency() {
    let all_ok = json!({"subtasks": [subtask("g", "success_no_skill_seen", None, json!([]))]});
    let exec = ScriptedExecutor::new([ScriptStep::Json(all_ok)]);
    let report = distill_trajectory(&request(evidence()), &exec, &Gateway::default()).unwrap();
    assert_eq!(report.warnings.len(), 2, "{:?}", report.warnings);
    assert!(report.warnings[0].contains("db-setup"));
}
