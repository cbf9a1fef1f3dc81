use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::{to_bytes, Body};
use axum::http::{Method, Request, StatusCode};
use planforge_core::model::ModelClient;
use planforge_core::optimize::{
    prepare_run, resume, run_loop, AwaitingSelection, LoopContext, RunConfig, RunDir, RunStore, SelectionSource,
};
use planforge_core::Execution;
use planforge_gateway::board::SelectionBoard;
use planforge_gateway::server::{router, AppState};
use serde_json::{json, Value};
use tower::ServiceExt;

fn bundled() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/demo")
}

fn state(root: &Path) -> AppState {
    AppState {
        store: RunStore::new(root),
        board: Arc::new(SelectionBoard::new()),
    }
}

fn call(state: &AppState, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let rt = tokio::runtime::Builder::new_current_thread().build().unwrap();
    rt.block_on(async {
        let req = Request::builder().method(method).uri(uri);
        let req = match body {
            Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
            None => req.body(Body::empty()),
        }
        .unwrap();
        let resp = router(state.clone()).oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
        (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
    })
}

fn get(state: &AppState, uri: &str) -> (StatusCode, Value) {
    call(state, Method::GET, uri, None)
}

fn post(state: &AppState, body: Value) -> (StatusCode, Value) {
    call(state, Method::POST, "/selection", Some(body))
}

/// Runs the bundled hybrid config to completion into `root/demo`.
fn hybrid_run(root: &Path) -> RunDir {
    let dir = bundled();
    let inputs = prepare_run(RunConfig::load(&dir.join("config.json")).unwrap(), &dir).unwrap();
    let run = RunDir::create(root.join("demo"), &inputs).unwrap();
    let model = ModelClient::replay_file(&dir.join("transcript.ndjson")).unwrap();
    run_loop(&LoopContext {
        run: &run,
        inputs: &inputs,
        model: &model,
        selection: None,
        exec: Execution::default(),
    })
    .unwrap();
    run
}

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let bytes = fs::read(&p).unwrap();
                out.push((p, bytes));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn empty_store_lists_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let s = state(dir.path());
    assert_eq!(get(&s, "/runs"), (StatusCode::OK, json!([])));
    assert_eq!(get(&s, "/runs/nope/iterations").0, StatusCode::NOT_FOUND);
    assert_eq!(get(&s, "/runs/nope/metrics").0, StatusCode::NOT_FOUND);
    assert_eq!(get(&s, "/iterations/nope-0/candidates").0, StatusCode::NOT_FOUND);
    assert_eq!(get(&s, "/iterations/garbage/candidates").0, StatusCode::NOT_FOUND);
    assert_eq!(get(&s, "/runs/..%2F..%2Fetc/iterations").0, StatusCode::NOT_FOUND);
}

#[test]
fn read_endpoints_describe_a_finished_run() {
    let dir = tempfile::tempdir().unwrap();
    hybrid_run(dir.path());
    let s = state(dir.path());
    let before = snapshot(dir.path());

    let (status, runs) = get(&s, "/runs");
    assert_eq!(status, StatusCode::OK);
    assert_eq!(runs[0]["run_id"], "demo");
    assert_eq!(runs[0]["status"], "stopped");
    assert_eq!(runs[0]["iterations"], 2);
    assert_eq!(runs[0]["selection_mode"], "hybrid");

    let (status, its) = get(&s, "/runs/demo/iterations");
    assert_eq!(status, StatusCode::OK);
    assert_eq!(its["iterations"].as_array().unwrap().len(), 2);
    assert_eq!(its["iterations"][0]["selected_plan_id"], "cand-00");
    assert_eq!(its["awaiting"], Value::Null);

    let (status, m) = get(&s, "/runs/demo/metrics");
    assert_eq!(status, StatusCode::OK);
    let finals: Vec<u64> = m["series"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["counts"]["final_passed"].as_u64().unwrap())
        .collect();
    assert_eq!(finals, [10, 14]);
    assert!(m["series"][0]["final_pass_rate"].is_f64());

    let (status, c) = get(&s, "/iterations/demo-0/candidates");
    assert_eq!(status, StatusCode::OK);
    assert_eq!(c["status"], "recorded");
    assert_eq!(c["selected_plan_id"], "cand-00");
    let cands = c["candidates"].as_array().unwrap();
    assert_eq!(cands.len(), 10);
    assert_eq!(cands[0]["plan_id"], "cand-00");
    let totals: Vec<u64> = cands.iter().map(|c| c["rubric"]["total"].as_u64().unwrap()).collect();
    assert!(totals.windows(2).all(|w| w[0] >= w[1]));
    assert!(cands.iter().all(|c| c["llm_score"].is_f64()));
    assert!(cands[0]["report"]["commonsense"].as_array().unwrap().len() == 8);
    assert_eq!(get(&s, "/iterations/demo-2/candidates").0, StatusCode::NOT_FOUND);

    assert_eq!(snapshot(dir.path()), before, "reads leave the store untouched");
}

#[test]
fn selection_errors_are_distinguished() {
    let dir = tempfile::tempdir().unwrap();
    hybrid_run(dir.path());
    let s = state(dir.path());
    let sel = |run: &str, index: u32, plan: &str| json!({"run_id": run, "iteration_index": index, "plan_id": plan});

    assert_eq!(post(&s, json!({"run_id": "demo"})).0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&s, Method::POST, "/selection", None).0.as_u16() / 100, 4);
    assert_eq!(post(&s, sel("nope", 0, "cand-00")).0, StatusCode::NOT_FOUND);
    assert_eq!(post(&s, sel("demo", 0, "cand-00")).0, StatusCode::CONFLICT);

    let pending = AwaitingSelection {
        index: 2,
        prompt_digest: "d".into(),
        metrics: resume(&RunDir::open(dir.path().join("demo"))).unwrap().records[0].metrics,
        candidate_ids: vec!["cand-00".into(), "cand-01".into()],
        rankings: vec![],
    };
    let board = s.board.clone();
    let waiter = std::thread::spawn(move || board.await_selection("demo", &pending));
    let deadline = Instant::now() + Duration::from_secs(5);
    while s.board.awaiting("demo").is_none() {
        assert!(Instant::now() < deadline);
        std::thread::sleep(Duration::from_millis(5));
    }
    assert_eq!(post(&s, sel("demo", 1, "cand-00")).0, StatusCode::CONFLICT);
    assert_eq!(post(&s, sel("demo", 2, "cand-09")).0, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, body) = post(&s, json!({"run_id": "demo", "iteration_index": 2, "plan_id": "cand-01", "reviewer_note": "n"}));
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["accepted"], true);
    let picked = waiter.join().unwrap().unwrap();
    assert_eq!((picked.plan_id.as_str(), picked.reviewer_note.as_deref()), ("cand-01", Some("n")));
    assert_eq!(post(&s, sel("demo", 2, "cand-01")).0, StatusCode::CONFLICT);
}

fn http(method: &str, url: &str, body: Option<Value>) -> (u16, Value) {
    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
    let resp = match body {
        Some(b) => agent.post(url).send_json(b),
        None if method == "GET" => agent.get(url).call(),
        None => unreachable!(),
    }
    .unwrap();
    let status = resp.status().as_u16();
    let v = resp.into_body().read_json::<Value>().unwrap_or(Value::Null);
    (status, v)
}

fn wait_for_awaiting(base: &str, index: u64) -> Value {
    let deadline = Instant::now() + Duration::from_secs(60);
    loop {
        let (status, v) = http("GET", &format!("{base}/runs/human/iterations"), None);
        if status == 200 && v["awaiting"]["index"].as_u64() == Some(index) {
            return v;
        }
        assert!(Instant::now() < deadline, "iteration {index} never awaited a selection");
        std::thread::sleep(Duration::from_millis(20));
    }
}

#[test]
fn human_run_end_to_end() {
    let dir = bundled();
    let store = tempfile::tempdir().unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_planforge"))
        .args(["run-loop", "--config"])
        .arg(dir.join("config.json"))
        .args(["--mode", "human", "--listen", "127.0.0.1:0", "--run-id", "human", "--store"])
        .arg(store.path())
        .arg("--stub-transcript")
        .arg(dir.join("transcript.ndjson"))
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stderr = BufReader::new(child.stderr.take().unwrap());
    let mut line = String::new();
    stderr.read_line(&mut line).unwrap();
    let base = line.trim().strip_prefix("listening on ").expect("listen line").to_string();

    let v = wait_for_awaiting(&base, 0);
    assert_eq!(v["iterations"], json!([]));
    let (status, runs) = http("GET", &format!("{base}/runs"), None);
    assert_eq!(status, 200);
    assert_eq!(runs[0]["status"], "awaiting-selection");
    let (status, c) = http("GET", &format!("{base}/iterations/human-0/candidates"), None);
    assert_eq!(status, 200);
    assert_eq!(c["status"], "awaiting-selection");
    assert_eq!(c["candidates"].as_array().unwrap().len(), 10);
    assert_eq!(c["candidates"][0]["plan_id"], "cand-00");
    let sources: Vec<&str> = c["rankings"].as_array().unwrap().iter().map(|r| r["source"].as_str().unwrap()).collect();
    assert_eq!(sources, ["rubric", "llm"]);
    let (status, m) = http("GET", &format!("{base}/runs/human/metrics"), None);
    assert_eq!(status, 200);
    assert_eq!(m["series"][0]["counts"]["final_passed"], 10);

    let sel = format!("{base}/selection");
    assert_eq!(http("POST", &sel, Some(json!({"run_id": "human", "iteration_index": 0, "plan_id": "bogus"}))).0, 422);
    assert_eq!(http("POST", &sel, Some(json!({"run_id": "human", "iteration_index": 0, "plan_id": "cand-00"}))).0, 200);
    assert_eq!(http("POST", &sel, Some(json!({"run_id": "human", "iteration_index": 0, "plan_id": "cand-00"}))).0, 409);

    wait_for_awaiting(&base, 1);
    let picked = json!({"run_id": "human", "iteration_index": 1, "plan_id": "cand-01", "reviewer_note": "shorter trips"});
    assert_eq!(http("POST", &sel, Some(picked)).0, 200);

    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("iteration 0: final pass 5.56% selected cand-00"), "{stdout}");
    assert!(stdout.contains("iteration 1: final pass 7.78% selected cand-01 stopped (max-iterations)"), "{stdout}");

    let p = resume(&RunDir::open(store.path().join("human"))).unwrap();
    let picks: Vec<_> = p.records.iter().map(|r| (r.selected_plan_id.as_deref(), r.reviewer_note.as_deref())).collect();
    assert_eq!(picks, [(Some("cand-00"), None), (Some("cand-01"), Some("shorter trips"))]);
    let finals: Vec<u64> = p.records.iter().map(|r| r.metrics.counts.final_passed).collect();
    assert_eq!(finals, [10, 14]);
    assert!(p.state.stopped);
}
