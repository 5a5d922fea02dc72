//! HTTP API over a review session.
//!
//! Handlers read the session under a shared lock. Every mutation is sent to
//! a single writer task over a channel, so decisions apply one at a time in
//! arrival order and readers never observe a half-applied change.

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock, RwLockReadGuard};
use std::time::Instant;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use batchline::graph::{Term, RDF_TYPE};
use batchline::ingest::instance_id;
use batchline::planner::{PairReport, ReportSummary, VerdictValue};
use batchline::review::{DecisionRecord, DecisionRequest, ReviewStatus, Session, SessionError};
use batchline::schema::serialize_schema;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::{mpsc, oneshot};

pub const PAGE_SIZE: usize = 50;

struct Shared {
    session: RwLock<Session>,
    evaluated_at: RwLock<Instant>,
}

enum Command {
    Decide(DecisionRequest, oneshot::Sender<Result<DecisionRecord, SessionError>>),
    Evaluate(oneshot::Sender<Result<ReportSummary, SessionError>>),
}

#[derive(Clone)]
pub struct AppState {
    shared: Arc<Shared>,
    writer: mpsc::Sender<Command>,
}

impl AppState {
    /// Takes ownership of the session and starts its writer task. Must be
    /// called inside a Tokio runtime.
    pub fn new(session: Session) -> Self {
        let shared = Arc::new(Shared {
            session: RwLock::new(session),
            evaluated_at: RwLock::new(Instant::now()),
        });
        let (tx, rx) = mpsc::channel(64);
        tokio::spawn(writer(shared.clone(), rx));
        Self { shared, writer: tx }
    }

    /// Runs `f` under the read lock.
    pub fn with_session<T>(&self, f: impl FnOnce(&Session) -> T) -> T {
        f(&self.session())
    }

    fn session(&self) -> RwLockReadGuard<'_, Session> {
        self.shared.session.read().expect("session lock poisoned")
    }

    async fn send<T>(&self, make: impl FnOnce(oneshot::Sender<T>) -> Command) -> Result<T, ApiError> {
        let (tx, rx) = oneshot::channel();
        self.writer
            .send(make(tx))
            .await
            .map_err(|_| ApiError::internal("writer task stopped"))?;
        rx.await.map_err(|_| ApiError::internal("writer task dropped the request"))
    }
}

async fn writer(shared: Arc<Shared>, mut rx: mpsc::Receiver<Command>) {
    while let Some(cmd) = rx.recv().await {
        let mut session = shared.session.write().expect("session lock poisoned");
        match cmd {
            Command::Decide(req, reply) => {
                let stamp = batchline::review::now_timestamp();
                let _ = reply.send(session.record(req, stamp));
            }
            Command::Evaluate(reply) => {
                let result = session.reevaluate().map(|r| r.summary.clone());
                if result.is_ok() {
                    *shared.evaluated_at.write().expect("clock lock poisoned") = Instant::now();
                }
                let _ = reply.send(result);
            }
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/schema", get(schema))
        .route("/samples/{id}", get(sample))
        .route("/pairs", get(pairs))
        .route("/pairs/{s1}/{s2}", get(pair))
        .route("/decisions", post(decide).get(decisions))
        .route("/batches", get(batches))
        .route("/evaluate", post(evaluate))
        .with_state(state)
}

// Errors

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad-request", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": {"code": self.code, "message": self.message}});
        (self.status, Json(body)).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let message = e.to_string();
        match e {
            SessionError::UnknownPair { .. } => Self::new(StatusCode::NOT_FOUND, "unknown-pair", message),
            SessionError::InvalidDecision(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid-decision", message),
            SessionError::Log(_) => Self::new(StatusCode::SERVICE_UNAVAILABLE, "log-unavailable", message),
            _ => Self::internal(message),
        }
    }
}

// Sample ids

/// Accepts a full identifier (`stups:sample/1`) or a bare sample key (`1`).
fn sample_id(session: &Session, raw: &str) -> Option<String> {
    if raw.contains(':') {
        Some(raw.to_string())
    } else {
        instance_id(session.schema(), "Sample", raw)
    }
}

// Handlers

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct Health {
    status: &'static str,
    graph_size: usize,
    /// Seconds since the report was last computed.
    report_age: f64,
    generation: u64,
    stale: bool,
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    let session = state.session();
    let age = state.shared.evaluated_at.read().expect("clock lock poisoned").elapsed();
    Json(Health {
        status: "ok",
        graph_size: session.graph().len(),
        report_age: age.as_secs_f64(),
        generation: session.graph().generation(),
        stale: session.is_stale(),
    })
}

async fn schema(State(state): State<AppState>) -> Response {
    let text = serialize_schema(state.session().schema());
    ([(axum::http::header::CONTENT_TYPE, "application/json")], text).into_response()
}

#[derive(Serialize)]
struct Fact {
    predicate: String,
    object: String,
}

async fn sample(State(state): State<AppState>, Path(raw): Path<String>) -> Result<Json<Value>, ApiError> {
    let session = state.session();
    let id = sample_id(&session, &raw).ok_or_else(|| ApiError::bad_request("empty sample id"))?;
    let graph = session.graph();
    let subject = Term::Entity(id.clone());
    let facts = graph.matches(Some(&subject), None, None);
    if facts.is_empty() {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "unknown-sample", format!("no facts about {id}")));
    }
    let types: Vec<String> = facts
        .iter()
        .filter(|t| t.predicate().as_entity() == Some(RDF_TYPE))
        .map(|t| t.object().to_string())
        .collect();
    let facts: Vec<Fact> = facts
        .iter()
        .map(|t| Fact {
            predicate: t.predicate().to_string(),
            object: t.object().to_string(),
        })
        .collect();
    Ok(Json(json!({"id": id, "types": types, "facts": facts})))
}

#[derive(Deserialize)]
struct PairQuery {
    status: Option<String>,
    rule: Option<String>,
    verdict: Option<String>,
    page: Option<usize>,
}

#[derive(Serialize)]
struct PairRow {
    s1: String,
    s2: String,
    status: ReviewStatus,
    verdicts: BTreeMap<String, VerdictValue>,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct PairPage {
    page: usize,
    page_size: usize,
    total: usize,
    generation: u64,
    stale: bool,
    pairs: Vec<PairRow>,
}

/// Filters pairs by review status and verdict. With `rule`, only that rule's
/// verdict is shown and `verdict` applies to it; otherwise `verdict` keeps
/// pairs where any rule has that value.
async fn pairs(State(state): State<AppState>, Query(q): Query<PairQuery>) -> Result<Json<PairPage>, ApiError> {
    let status = match q.status.as_deref() {
        None | Some("") => None,
        Some(s) => Some(ReviewStatus::parse(s).ok_or_else(|| ApiError::bad_request(format!("unknown status {s:?}")))?),
    };
    let verdict = match q.verdict.as_deref() {
        None | Some("") => None,
        Some(v) => Some(
            VerdictValue::parse(&v.to_uppercase())
                .ok_or_else(|| ApiError::bad_request(format!("unknown verdict {v:?}")))?,
        ),
    };
    let page = q.page.unwrap_or(1);
    if page == 0 {
        return Err(ApiError::bad_request("pages start at 1"));
    }
    let session = state.session();
    let report = session.report();
    if let Some(rule) = &q.rule {
        if !report.rules.contains(rule) {
            return Err(ApiError::new(StatusCode::NOT_FOUND, "unknown-rule", format!("no rule named {rule}")));
        }
    }

    let mut rows = Vec::new();
    for p in &report.pairs {
        let st = session.status(&p.s1, &p.s2);
        if status.is_some_and(|s| s != st) {
            continue;
        }
        let verdicts: BTreeMap<String, VerdictValue> = p
            .verdicts
            .iter()
            .filter(|(name, _)| q.rule.as_ref().is_none_or(|r| r == *name))
            .map(|(name, v)| (name.clone(), v.value))
            .collect();
        if verdict.is_some_and(|want| !verdicts.values().any(|v| *v == want)) {
            continue;
        }
        rows.push(PairRow {
            s1: p.s1.clone(),
            s2: p.s2.clone(),
            status: st,
            verdicts,
        });
    }
    let total = rows.len();
    let pairs: Vec<PairRow> = rows.into_iter().skip((page - 1) * PAGE_SIZE).take(PAGE_SIZE).collect();
    Ok(Json(PairPage {
        page,
        page_size: PAGE_SIZE,
        total,
        generation: session.report_generation(),
        stale: session.is_stale(),
        pairs,
    }))
}

#[derive(Serialize)]
struct PairDetail<'a> {
    #[serde(flatten)]
    report: &'a PairReport,
    status: ReviewStatus,
    decisions: Vec<&'a DecisionRecord>,
}

async fn pair(State(state): State<AppState>, Path((a, b)): Path<(String, String)>) -> Result<Response, ApiError> {
    let session = state.session();
    let (s1, s2) = match (sample_id(&session, &a), sample_id(&session, &b)) {
        (Some(x), Some(y)) => (x, y),
        _ => return Err(ApiError::bad_request("empty sample id")),
    };
    let report = session
        .report()
        .pair(&s1, &s2)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown-pair", format!("pair ({s1}, {s2}) is not in the current report")))?;
    let detail = PairDetail {
        report,
        status: session.status(&s1, &s2),
        decisions: session.decisions_for(&s1, &s2),
    };
    Ok(Json(detail).into_response())
}

async fn decide(State(state): State<AppState>, Json(mut req): Json<DecisionRequest>) -> Result<Response, ApiError> {
    {
        let session = state.session();
        let resolve = |raw: &str| sample_id(&session, raw).ok_or_else(|| ApiError::bad_request("empty sample id"));
        req.s1 = resolve(&req.s1)?;
        req.s2 = resolve(&req.s2)?;
    }
    let record = state.send(|tx| Command::Decide(req, tx)).await??;
    Ok((StatusCode::CREATED, Json(record)).into_response())
}

#[derive(Deserialize)]
struct DecisionQuery {
    /// `s1,s2`
    pair: Option<String>,
}

async fn decisions(State(state): State<AppState>, Query(q): Query<DecisionQuery>) -> Result<Json<Vec<DecisionRecord>>, ApiError> {
    let session = state.session();
    let records: Vec<DecisionRecord> = match q.pair.as_deref() {
        None | Some("") => session.decisions().to_vec(),
        Some(pair) => {
            let (a, b) = pair
                .split_once(',')
                .ok_or_else(|| ApiError::bad_request("pair must be given as s1,s2"))?;
            match (sample_id(&session, a.trim()), sample_id(&session, b.trim())) {
                (Some(s1), Some(s2)) => session.decisions_for(&s1, &s2).into_iter().cloned().collect(),
                _ => return Err(ApiError::bad_request("empty sample id")),
            }
        }
    };
    Ok(Json(records))
}

async fn batches(State(state): State<AppState>) -> Json<Value> {
    Json(json!(state.session().batches()))
}

async fn evaluate(State(state): State<AppState>) -> Result<Json<Value>, ApiError> {
    let summary = state.send(Command::Evaluate).await??;
    let generation = state.session().report_generation();
    Ok(Json(json!({"generation": generation, "summary": summary})))
}
