use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn skillctl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skillctl"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn skillctl")
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn skill(root: &Path, name: &str, body: &str) {
    let dir = root.join(name);
    fs::create_dir_all(&dir).unwrap();
    fs::write(dir.join("SKILL.md"), format!("---\nname: {name}\ndescription: Test skill {name}.\n---\n{body}")).unwrap();
}

fn script(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, format!("#!/bin/sh\n{body}")).unwrap();
    fs::set_permissions(&path, fs::Permissions::from_mode(0o755)).unwrap();
    path
}

fn tasks_file(dir: &Path, n: usize) -> PathBuf {
    let path = dir.join("tasks.yaml");
    let body: String = (1..=n)
        .map(|i| format!("- task_id: task-{i}\n  instruction: Fix bug {i}.\n"))
        .collect();
    fs::write(&path, body).unwrap();
    path
}

#[test]
fn profile_writes_deterministic_json_lines() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    skill(&corpus, "fetch-data", "Run `curl -sSf https://example.org/data.csv`.\n");
    skill(&corpus, "build", "Run `sudo make install`.\n");
    fs::create_dir_all(corpus.join("Not A Slug")).unwrap();
    let at = "--profiled-at=2026-01-01T00:00:00Z";
    let first = ok(skillctl(&["profile", "corpus", at], tmp.path()));
    let second = ok(skillctl(&["profile", "corpus", at, "--out", "profile.jsonl", "--failures", "failed.jsonl"], tmp.path()));
    assert!(second.is_empty());
    assert_eq!(first, fs::read_to_string(tmp.path().join("profile.jsonl")).unwrap());
    let records: Vec<Value> = first.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 2);
    assert_eq!(records[0]["skill_name"], "build");
    assert_eq!(records[0]["runtime"]["needs_sudo"], true);
    assert_eq!(records[1]["runtime"]["needs_network"], true);
    assert_eq!(fs::read_to_string(tmp.path().join("failed.jsonl")).unwrap().lines().count(), 1);
}

#[test]
fn recommend_with_a_command_agent() {
    let tmp = tempfile::tempdir().unwrap();
    skill(&tmp.path().join("skills"), "alpha", "Do alpha.\n");
    skill(&tmp.path().join("skills"), "beta", "Do beta.\n");
    fs::write(tmp.path().join("task.yaml"), "task_id: t\ninstruction: Use alpha somehow.\n").unwrap();
    let agent = script(
        tmp.path(),
        "agent.sh",
        "cat > /dev/null\necho '{\"skill_names\": [\"alpha\"], \"optimized_context\": \"Start with alpha.\"}'\n",
    );
    let agent_cmd = format!("--agent-cmd={}", agent.display());
    let out = ok(skillctl(
        &["recommend", "task.yaml", "--skills", "skills", "--dest", "dest", &agent_cmd, "--artifacts", "art"],
        tmp.path(),
    ));
    let outcome: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(outcome["mode"], "selected");
    assert!(outcome["final_instruction"].as_str().unwrap().ends_with("Start with alpha."));
    assert!(tmp.path().join("dest/alpha/SKILL.md").exists());
    assert!(!tmp.path().join("dest/beta").exists());
    assert!(tmp.path().join("art/outcome.json").exists());
}

#[test]
fn simulated_stream_then_evolve_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let tasks = tasks_file(tmp.path(), 6);
    let tasks = tasks.to_str().unwrap();
    fs::write(tmp.path().join("online.yaml"), "mode: online\nruntime_library_root: lib\n").unwrap();
    fs::write(tmp.path().join("baseline.yaml"), "mode: baseline\n").unwrap();

    let summary = ok(skillctl(&["run", "online.yaml", "--tasks", tasks, "--run-dir", "online", "--simulate"], tmp.path()));
    let summary: Value = serde_json::from_str(&summary).unwrap();
    assert_eq!(summary["evolution_batches"].as_array().unwrap().len(), 1);
    assert_eq!(summary["unevolved_units"], 2);
    assert!(tmp.path().join("online/checkpoints/1/learned-1/SKILL.md").exists());
    assert!(tmp.path().join("online/metrics.json").exists());

    let report = ok(skillctl(
        &["evolve", "--units", "online/pending_units.jsonl", "--library", "lib", "--out", "batch", "--simulate"],
        tmp.path(),
    ));
    let report: Value = serde_json::from_str(&report).unwrap();
    assert_eq!(report["units_total"], 2);
    assert_eq!(report["edited"], serde_json::json!(["learned-1"]));
    assert!(tmp.path().join("batch/report.json").exists());
    assert_eq!(fs::read_dir(tmp.path().join("lib/.backups")).unwrap().count(), 1);

    ok(skillctl(&["run", "baseline.yaml", "--tasks", tasks, "--run-dir", "base", "--simulate"], tmp.path()));
    let metrics = ok(skillctl(&["report", "online", "--baseline", "base", "--out", "m.json"], tmp.path()));
    assert!(metrics.is_empty());
    let metrics: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("m.json")).unwrap()).unwrap();
    assert_eq!(metrics["avg_at_k"], 1.0);
    assert_eq!(metrics["delta_pp"], 0.0);
    assert_eq!(metrics["k"], 1);

    let pooled: Value = serde_json::from_str(&ok(skillctl(&["report", "online", "base"], tmp.path()))).unwrap();
    assert_eq!(pooled["k"], 2);
}

#[test]
fn online_stream_with_command_backends() {
    let tmp = tempfile::tempdir().unwrap();
    let tasks = tasks_file(tmp.path(), 2);
    fs::write(tmp.path().join("cfg.yaml"), "mode: online\nruntime_library_root: lib\nevolution_batch_size: 2\n").unwrap();
    let solver = script(tmp.path(), "solver.sh", "cat > /dev/null\necho \"log line\"\necho \"sess-$TRIAL_ID\"\n");
    let verifier = script(tmp.path(), "verifier.sh", "echo '{\"total\": 3, \"passed\": 3}'\n");
    let agent = script(
        tmp.path(),
        "agent.sh",
        r#"cat > /dev/null
case "$AGENT_TEMPLATE_ID" in
recommendation)
  echo '{"skill_names": [], "optimized_context": "Nothing fits."}' ;;
attribution)
  echo '{"subtasks": [{"goal": "fix", "summary": "Fixed it.", "exploration": "Read the stack trace.", "exploration_reason": "No skill covered it.", "judge": "environment", "judge_reason": "Tests passed.", "attribution": "success_no_skill_seen", "attribution_reason": "Solved unaided.", "skill_linked": null, "skill_refs": []}]}' ;;
evolution-create)
  dir="$AGENT_WORKING_ROOT/create/trace-reading"
  mkdir -p "$dir"
  printf -- '---\nname: trace-reading\ndescription: Read stack traces first.\n---\n1. Read the trace.\n' > "$dir/SKILL.md"
  echo "{\"actions\": [{\"action_type\": \"create_skill\", \"rationale\": \"Repeated approach.\", \"summary\": null, \"skill_dir_path\": \"$dir\"}]}" ;;
*)
  exit 3 ;;
esac
"#,
    );
    let out = ok(skillctl(
        &[
            "run",
            "cfg.yaml",
            "--tasks",
            tasks.to_str().unwrap(),
            "--run-dir",
            "run",
            &format!("--agent-cmd={}", agent.display()),
            &format!("--solver-cmd={}", solver.display()),
            &format!("--verifier-cmd={}", verifier.display()),
        ],
        tmp.path(),
    ));
    let summary: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(summary["attributions"], 2);
    assert!(tmp.path().join("lib/trace-reading/SKILL.md").exists());
    let trial: Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("run/trials/0001-task-1-a1/trial.json")).unwrap()).unwrap();
    assert_eq!(trial["solver_session"], "sess-0001-task-1-a1");
    assert_eq!(trial["evidence"]["passed"], 3);
    assert_eq!(trial["state"], "closed");
}

#[test]
fn usage_errors_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let tasks = tasks_file(tmp.path(), 1);
    fs::write(tmp.path().join("cfg.yaml"), "mode: baseline\n").unwrap();
    let missing = skillctl(&["run", "cfg.yaml", "--tasks", tasks.to_str().unwrap(), "--run-dir", "r"], tmp.path());
    assert!(!missing.status.success());

    fs::write(tmp.path().join("bad.yaml"), "mode: online\n").unwrap();
    let bad = skillctl(&["run", "bad.yaml", "--tasks", tasks.to_str().unwrap(), "--run-dir", "r", "--simulate"], tmp.path());
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("runtime_library_root"));

    let none = skillctl(&["report", "nowhere"], tmp.path());
    assert!(!none.status.success());
}
