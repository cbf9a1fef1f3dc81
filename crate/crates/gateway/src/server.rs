//! HTTP API over a run store. Handlers only read run directories and hand
//! selections to the [`SelectionBoard`]; the loop is the single writer.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use planforge_core::constraints::{evaluate, EvaluationReport};
use planforge_core::discriminators::{score_query, DifficultyScore, Ranking, RankingSource};
use planforge_core::metrics::BatchMetrics;
use planforge_core::optimize::{resume, AwaitingSelection, IterationRecord, RunProgress, RunStore, SelectionMode};
use serde::Serialize;
use serde_json::json;

use crate::board::{ApiSelection, SelectionBoard, SubmitError};

#[derive(Clone)]
pub struct AppState {
    pub store: RunStore,
    pub board: Arc<SelectionBoard>,
}

#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl ApiError {
    fn not_found(what: impl Into<String>) -> Self {
        ApiError(StatusCode::NOT_FOUND, what.into())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn progress(state: &AppState, run_id: &str) -> Result<RunProgress, ApiError> {
    let run = state
        .store
        .run(run_id)
        .ok_or_else(|| ApiError::not_found(format!("unknown run `{run_id}`")))?;
    resume(&run).map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub run_id: String,
    pub selection_mode: Option<SelectionMode>,
    pub threshold: Option<f64>,
    pub max_iterations: Option<u32>,
    pub iterations: usize,
    /// `running`, `awaiting-selection`, `stopped`, `failed` or `unreadable`.
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn summarize(state: &AppState, run_id: String) -> RunSummary {
    match progress(state, &run_id) {
        Ok(p) => {
            let status = if p.state.stopped {
                "stopped"
            } else if p.awaiting.is_some() {
                "awaiting-selection"
            } else if p.errors.last().is_some_and(|(i, _)| *i == p.state.next_index) {
                "failed"
            } else {
                "running"
            };
            let error = p.errors.last().filter(|_| status == "failed").map(|(_, m)| m.clone());
            let c = &p.inputs.config;
            RunSummary {
                run_id,
                selection_mode: Some(c.selection_mode),
                threshold: Some(c.threshold),
                max_iterations: Some(c.max_iterations),
                iterations: p.records.len(),
                status,
                error,
            }
        }
        Err(e) => RunSummary {
            run_id,
            selection_mode: None,
            threshold: None,
            max_iterations: None,
            iterations: 0,
            status: "unreadable",
            error: Some(e.1),
        },
    }
}

async fn list_runs(State(state): State<AppState>) -> ApiResult<Vec<RunSummary>> {
    let ids = state
        .store
        .list()
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(Json(ids.into_iter().map(|id| summarize(&state, id)).collect()))
}

#[derive(Debug, Serialize)]
pub struct IterationsPayload {
    pub run_id: String,
    pub iterations: Vec<IterationRecord>,
    pub awaiting: Option<AwaitingSelection>,
}

async fn run_iterations(State(state): State<AppState>, Path(run_id): Path<String>) -> ApiResult<IterationsPayload> {
    let p = progress(&state, &run_id)?;
    Ok(Json(IterationsPayload {
        run_id,
        iterations: p.records,
        awaiting: p.awaiting,
    }))
}

#[derive(Debug, Serialize)]
pub struct MetricsPoint {
    pub index: u32,
    #[serde(flatten)]
    pub metrics: BatchMetrics,
}

#[derive(Debug, Serialize)]
pub struct MetricsPayload {
    pub run_id: String,
    pub series: Vec<MetricsPoint>,
}

async fn run_metrics(State(state): State<AppState>, Path(run_id): Path<String>) -> ApiResult<MetricsPayload> {
    let p = progress(&state, &run_id)?;
    let mut series: Vec<MetricsPoint> = p
        .records
        .iter()
        .map(|r| MetricsPoint {
            index: r.index,
            metrics: r.metrics,
        })
        .collect();
    if let Some(a) = &p.awaiting {
        series.push(MetricsPoint {
            index: a.index,
            metrics: a.metrics,
        });
    }
    Ok(Json(MetricsPayload { run_id, series }))
}

#[derive(Debug, Serialize)]
pub struct CandidateView {
    pub plan_id: String,
    pub query_id: String,
    pub query_raw_text: String,
    pub plan_text: String,
    pub rubric: DifficultyScore,
    pub report: EvaluationReport,
    pub llm_score: Option<f64>,
    pub ground_truth: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct CandidatesPayload {
    pub iteration_id: String,
    pub run_id: String,
    pub index: u32,
    /// `awaiting-selection` or `recorded`.
    pub status: &'static str,
    pub selected_plan_id: Option<String>,
    pub reviewer_note: Option<String>,
    pub candidates: Vec<CandidateView>,
    pub rankings: Vec<Ranking>,
}

/// Splits `<run>-<index>` at the last hyphen.
pub fn parse_iteration_id(id: &str) -> Option<(&str, u32)> {
    let (run, index) = id.rsplit_once('-')?;
    if run.is_empty() || index.is_empty() || !index.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some((run, index.parse().ok()?))
}

pub fn iteration_id(run_id: &str, index: u32) -> String {
    format!("{run_id}-{index}")
}

fn score_of(rankings: &[Ranking], source: RankingSource, id: &str) -> Option<f64> {
    rankings.iter().find(|r| r.source == source).and_then(|r| r.scores.get(id).copied())
}

async fn iteration_candidates(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<CandidatesPayload> {
    let (run_id, index) = parse_iteration_id(&id).ok_or_else(|| ApiError::not_found(format!("unknown iteration `{id}`")))?;
    let p = progress(&state, run_id)?;
    let (status, ids, rankings, selected, note) = if let Some(r) = p.records.get(index as usize) {
        ("recorded", &r.candidate_ids, &r.rankings, r.selected_plan_id.clone(), r.reviewer_note.clone())
    } else if let Some(a) = p.awaiting.as_ref().filter(|a| a.index == index) {
        ("awaiting-selection", &a.candidate_ids, &a.rankings, None, None)
    } else {
        return Err(ApiError::not_found(format!("unknown iteration `{id}`")));
    };
    let sandbox = &p.inputs.sandbox;
    let by_id: BTreeMap<&str, _> = p.inputs.candidates.iter().map(|c| (c.plan_id.as_str(), c)).collect();
    let mut candidates = Vec::new();
    for pid in ids {
        let c = by_id
            .get(pid.as_str())
            .ok_or_else(|| ApiError(StatusCode::INTERNAL_SERVER_ERROR, format!("candidate `{pid}` missing from run")))?;
        let report = match c.plan() {
            Ok(plan) => evaluate(&plan, &c.query, sandbox),
            Err(_) => EvaluationReport::undelivered(&c.query.id),
        };
        let rubric = score_query(&c.query).map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        candidates.push(CandidateView {
            plan_id: c.plan_id.clone(),
            query_id: c.query.id.clone(),
            query_raw_text: c.query.raw_text.clone(),
            plan_text: c.plan_text.clone(),
            rubric,
            report,
            llm_score: score_of(rankings, RankingSource::Llm, pid),
            ground_truth: score_of(rankings, RankingSource::GroundTruth, pid),
        });
    }
    candidates.sort_by(|a, b| b.rubric.total.cmp(&a.rubric.total).then_with(|| a.plan_id.cmp(&b.plan_id)));
    Ok(Json(CandidatesPayload {
        iteration_id: iteration_id(run_id, index),
        run_id: run_id.to_string(),
        index,
        status,
        selected_plan_id: selected,
        reviewer_note: note,
        candidates,
        rankings: rankings.clone(),
    }))
}

async fn post_selection(
    State(state): State<AppState>,
    body: Result<Json<ApiSelection>, JsonRejection>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let Json(sel) = body.map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.body_text()))?;
    if state.store.run(&sel.run_id).is_none() {
        return Err(ApiError::not_found(format!("unknown run `{}`", sel.run_id)));
    }
    match state.board.submit(&sel) {
        Ok(()) => Ok(Json(json!({
            "accepted": true,
            "run_id": sel.run_id,
            "iteration_index": sel.iteration_index,
            "plan_id": sel.plan_id,
        }))),
        Err(e @ SubmitError::NotAwaiting { .. }) => Err(ApiError(StatusCode::CONFLICT, e.to_string())),
        Err(e @ SubmitError::NotCandidate(_)) => Err(ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.to_string())),
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/runs", get(list_runs))
        .route("/runs/{id}/iterations", get(run_iterations))
        .route("/runs/{id}/metrics", get(run_metrics))
        .route("/iterations/{id}/candidates", get(iteration_candidates))
        .route("/selection", post(post_selection))
        .with_state(state)
}

/// Binds `addr` and serves until `shutdown` resolves. `on_bound` receives
/// the bound address (useful with port 0).
pub async fn serve(
    addr: SocketAddr,
    state: AppState,
    on_bound: impl FnOnce(SocketAddr),
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    on_bound(listener.local_addr()?);
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
