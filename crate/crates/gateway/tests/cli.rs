use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use planforge_core::demo::{demo_world, DemoResponder};
use planforge_core::discriminators::{ground_truth_ordering, GroundTruthOptions, GroundTruthOrdering};
use planforge_core::fixtures::{oracle_feasible_plan, oracle_query, oracle_sandbox};
use planforge_core::model::ModelClient;
use planforge_core::optimize::default_skeleton;
use planforge_core::sandbox::{export_csv_tables, load_sandbox, write_reference_archive};
use planforge_core::{serialize_plan, EvaluationReport, Execution};
use serde_json::Value;

fn planforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_planforge")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn bundled() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/demo")
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(planforge(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(planforge(&[]).status.code(), Some(2));
    assert_eq!(planforge(&["evaluate", "--plan", "x"]).status.code(), Some(2));
    let help = planforge(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    for sub in ["ingest", "export-csv", "evaluate", "score-query", "rank", "ground-truth", "build-prompt", "run-loop", "metrics", "serve"] {
        assert!(stdout(&help).contains(sub), "help lists {sub}");
    }
}

#[test]
fn runtime_errors_exit_one_with_a_diagnostic() {
    let out = planforge(&["score-query", "--query", "/no/such/file.rec"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn score_query_on_the_minimal_query() {
    let dir = tempfile::tempdir().unwrap();
    let q = dir.path().join("q1.rec");
    fs::write(&q, r#"{"id":"q1","origin_city":"A","destinations":["B"],"duration_days":3,"people":1,"budget":500}"#).unwrap();
    let out = planforge(&["score-query", "--query", p(&q)]);
    assert!(out.status.success());
    let v: Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(v["query_id"], "q1");
    assert_eq!(v["total"], 0);
    for k in ["days", "cities", "people", "room_rules", "cuisines", "transportation"] {
        assert_eq!(v["components"][k], 0, "{k}");
    }
}

#[test]
fn evaluate_reports_a_repeated_attraction() {
    let dir = tempfile::tempdir().unwrap();
    let sandbox = dir.path().join("sandbox");
    export_csv_tables(&oracle_sandbox(), &sandbox).unwrap();
    let mut plan = oracle_feasible_plan();
    plan.days[2].attractions = plan.days[1].attractions.clone();
    let plan_path = dir.path().join("p.txt");
    fs::write(&plan_path, serialize_plan(&plan)).unwrap();
    let q = dir.path().join("q.rec");
    fs::write(&q, serde_json::to_string(&oracle_query(425.0)).unwrap()).unwrap();

    let out = planforge(&["evaluate", "--plan", p(&plan_path), "--query", p(&q), "--sandbox", p(&sandbox)]);
    assert_eq!(out.status.code(), Some(0));
    let report: EvaluationReport = serde_json::from_str(&stdout(&out)).unwrap();
    let failed: Vec<&str> = report.failures().map(|o| o.constraint_id.as_str()).collect();
    assert_eq!(failed, ["diverse-attractions"]);

    fs::write(&plan_path, "no plan today").unwrap();
    let out = planforge(&["evaluate", "--plan", p(&plan_path), "--query", p(&q), "--sandbox", p(&sandbox)]);
    assert_eq!(out.status.code(), Some(0));
    let report: EvaluationReport = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(!report.delivered);
}

#[test]
fn ingest_and_export_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let archive = dir.path().join("ref.json");
    let world = demo_world();
    write_reference_archive(&world.sandbox, &archive).unwrap();
    let tables = dir.path().join("tables");
    let out = planforge(&["ingest", "--archive", p(&archive), "--out", p(&tables)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout(&out).lines().count(), 5);
    assert_eq!(load_sandbox(&tables).unwrap(), world.sandbox);
    let again = dir.path().join("again");
    assert!(planforge(&["export-csv", "--sandbox", p(&tables), "--out", p(&again)]).status.success());
    for f in fs::read_dir(&tables).unwrap() {
        let f = f.unwrap();
        assert_eq!(fs::read(f.path()).unwrap(), fs::read(again.join(f.file_name())).unwrap());
    }
}

#[test]
fn rank_by_rubric_and_override() {
    let dir = bundled();
    let cands = dir.join("candidates.ndjson");
    let out = planforge(&["rank", "--candidates", p(&cands)]);
    assert!(out.status.success());
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["selected"], "cand-00");
    assert_eq!(v["rankings"][0]["source"], "rubric");
    let out = planforge(&["rank", "--candidates", p(&cands), "--override", "cand-04"]);
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["selected"], "cand-04");
    assert_eq!(planforge(&["rank", "--candidates", p(&cands), "--override", "nope"]).status.code(), Some(1));
}

#[test]
fn llm_ranking_replays_the_bundled_transcript() {
    let dir = bundled();
    let out = planforge(&[
        "rank",
        "--candidates",
        p(&dir.join("candidates.ndjson")),
        "--mode",
        "llm",
        "--stub-transcript",
        p(&dir.join("transcript.ndjson")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["selected"], "cand-00");
    assert_eq!(v["rankings"][0]["source"], "llm");
}

#[test]
fn missing_endpoint_is_a_diagnostic() {
    let dir = bundled();
    let out = Command::new(env!("CARGO_BIN_EXE_planforge"))
        .args(["rank", "--candidates", p(&dir.join("candidates.ndjson")), "--mode", "llm"])
        .env_remove("PLANFORGE_MODEL_URL")
        .env_remove("PLANFORGE_DISCRIMINATOR_URL")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("PLANFORGE_DISCRIMINATOR_URL"));
}

#[test]
fn ground_truth_replays_a_recorded_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let world = demo_world();
    let sandbox_dir = dir.path().join("sandbox");
    export_csv_tables(&world.sandbox, &sandbox_dir).unwrap();
    let candidates = &world.candidates[..3];
    let queries = &world.validation[..6];
    let cand_path = dir.path().join("candidates.ndjson");
    let lines: String = candidates.iter().map(|c| serde_json::to_string(c).unwrap() + "\n").collect();
    fs::write(&cand_path, lines).unwrap();
    let q_path = dir.path().join("queries.json");
    fs::write(&q_path, serde_json::to_string(queries).unwrap()).unwrap();

    let recorder = ModelClient::record(Arc::new(DemoResponder::new(world.clone())));
    let opts = GroundTruthOptions {
        runs: 2,
        exec: Execution::Sequential,
        ..Default::default()
    };
    let expected =
        ground_truth_ordering(candidates, &default_skeleton(&world.sandbox), queries, &world.sandbox, &recorder, &opts).unwrap();
    let transcript = dir.path().join("t.ndjson");
    recorder.recorded().unwrap().save(&transcript).unwrap();

    let out = planforge(&[
        "ground-truth",
        "--candidates",
        p(&cand_path),
        "--queries",
        p(&q_path),
        "--sandbox",
        p(&sandbox_dir),
        "--runs",
        "2",
        "--stub-transcript",
        p(&transcript),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let got: GroundTruthOrdering = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(got, expected);
    assert_eq!(got.ordering[0], "cand-00");
}

#[test]
fn build_prompt_explicit_and_whitebox() {
    let dir = tempfile::tempdir().unwrap();
    let sandbox = dir.path().join("sandbox");
    export_csv_tables(&oracle_sandbox(), &sandbox).unwrap();
    let out = planforge(&["build-prompt", "--sandbox", p(&sandbox)]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("Constraints:\n1. [commonsense] Within sandbox:"));
    assert!(text.contains("accommodations.csv"));

    let recorder = ModelClient::record(Arc::new(DemoResponder::new(demo_world())));
    let transcript = dir.path().join("t.ndjson");
    for id in planforge_core::constraints::ConstraintId::ALL {
        let code = planforge_core::concept::unit_source(id);
        planforge_core::concept::summarize_whitebox(code, &[], &recorder).unwrap();
    }
    recorder.recorded().unwrap().save(&transcript).unwrap();
    let json = dir.path().join("skeleton.json");
    let out = planforge(&[
        "build-prompt",
        "--sandbox",
        p(&sandbox),
        "--mode",
        "whitebox",
        "--stub-transcript",
        p(&transcript),
        "--out",
        p(&json),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let skeleton: planforge_core::concept::SkeletonPrompt = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(skeleton.constraints.len(), 12);
    let budget = skeleton.constraints.iter().find(|s| s.constraint_id.as_deref() == Some("budget")).unwrap();
    assert_eq!(budget.statement, planforge_core::constraints::ConstraintId::Budget.descriptor().description);
}

#[test]
fn metrics_for_reports_and_runs() {
    let dir = tempfile::tempdir().unwrap();
    let reports = dir.path().join("r.ndjson");
    let r = planforge_core::evaluate(&oracle_feasible_plan(), &oracle_query(425.0), &oracle_sandbox());
    let lines = [serde_json::to_string(&r).unwrap(), serde_json::to_string(&EvaluationReport::undelivered("x")).unwrap()];
    fs::write(&reports, lines.join("\n") + "\n").unwrap();
    let out = planforge(&["metrics", "--reports", p(&reports)]);
    assert!(out.status.success());
    let text = stdout(&out);
    let row = text.lines().find(|l| l.starts_with("batch")).unwrap();
    assert_eq!(row.split_whitespace().nth(1), Some("50.00"), "{text}");
    assert_eq!(planforge(&["metrics"]).status.code(), Some(2));
}
