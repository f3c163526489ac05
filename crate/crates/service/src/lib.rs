//! HTTP service for live labeling sessions.
//!
//! Each session draws an importance-weighted sample for one neuron and
//! concept, hands it out to raters in tasks of up to 15 inputs with a
//! ten-minute lease, appends every accepted rating to a JSONL log, and keeps a
//! Bayes-aggregated correlation estimate current after each submission.

pub mod session;
pub mod store;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;

use neurongauge_core::dataset::Workspace;
use neurongauge_core::Error;

use session::{EstimateState, Session, SessionConfig, SessionError, SessionSummary, Submission};
use store::Store;

pub const DEFAULT_LEASE_MINUTES: i64 = 10;
/// Header carrying the rater token when it is not in the query or body.
pub const RATER_HEADER: &str = "x-rater-id";

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// A clock that only moves when told to.
#[derive(Debug)]
pub struct ManualClock(Mutex<DateTime<Utc>>);

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        Self(Mutex::new(start))
    }

    pub fn advance(&self, by: Duration) {
        let mut t = self.0.lock().unwrap();
        *t += by;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock().unwrap()
    }
}

struct SessionHandle {
    session: Mutex<Session>,
    /// Latest estimate, swapped in after every accepted submission.
    snapshot: RwLock<Arc<(EstimateState, SessionSummary)>>,
}

impl SessionHandle {
    fn new(session: Session) -> Self {
        let snap = Arc::new((session.estimate().clone(), session.summary()));
        Self { session: Mutex::new(session), snapshot: RwLock::new(snap) }
    }

    fn publish(&self, session: &Session) {
        *self.snapshot.write().unwrap() = Arc::new((session.estimate().clone(), session.summary()));
    }

    fn snapshot(&self) -> Arc<(EstimateState, SessionSummary)> {
        self.snapshot.read().unwrap().clone()
    }
}

pub struct AppState {
    workspace: Arc<Workspace>,
    store: Store,
    clock: Arc<dyn Clock>,
    lease: Duration,
    sessions: RwLock<BTreeMap<String, Arc<SessionHandle>>>,
    next_id: AtomicU64,
}

impl AppState {
    /// Opens the store and rebuilds every session found in it.
    pub fn open(workspace: Arc<Workspace>, store: Store, clock: Arc<dyn Clock>) -> neurongauge_core::Result<Self> {
        let mut sessions = BTreeMap::new();
        let mut next = 1;
        for (manifest, records) in store.load_all()? {
            if let Some(n) = manifest.session_id.strip_prefix('s').and_then(|n| n.parse::<u64>().ok()) {
                next = next.max(n + 1);
            }
            let id = manifest.session_id.clone();
            let session = Session::restore(&workspace, manifest, records)?;
            tracing::info!(session = %id, ratings = session.records.len(), "restored session");
            sessions.insert(id, Arc::new(SessionHandle::new(session)));
        }
        Ok(Self {
            workspace,
            store,
            clock,
            lease: Duration::minutes(DEFAULT_LEASE_MINUTES),
            sessions: RwLock::new(sessions),
            next_id: AtomicU64::new(next),
        })
    }

    pub fn with_lease(mut self, lease: Duration) -> Self {
        self.lease = lease;
        self
    }

    fn handle(&self, id: &str) -> Result<Arc<SessionHandle>, ApiError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("no session `{id}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { status, body: ErrorBody { error: code.to_string(), message: message.into() } }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::UnknownNeuron(_) | Error::UnknownConcept(_) => Self::new(StatusCode::NOT_FOUND, "not_found", e.to_string()),
            Error::Io { .. } => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "io", e.to_string()),
            _ => Self::new(StatusCode::BAD_REQUEST, "validation", e.to_string()),
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let msg = e.to_string();
        match e {
            SessionError::LeaseHeld(..) => Self::new(StatusCode::CONFLICT, "lease_held", msg),
            SessionError::LeaseExpired { .. } => Self::new(StatusCode::GONE, "lease_expired", msg),
            SessionError::UnknownTask(_) => Self::new(StatusCode::NOT_FOUND, "not_found", msg),
            SessionError::Arity { .. } => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "arity", msg),
            SessionError::BadBit(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_rating", msg),
            SessionError::Core(e) => e.into(),
        }
    }
}

fn bad_json(e: JsonRejection) -> ApiError {
    ApiError::new(StatusCode::BAD_REQUEST, "validation", e.body_text())
}

type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/task", get(next_task))
        .route("/sessions/{id}/ratings", post(submit_ratings))
        .route("/sessions/{id}/estimate", get(current_estimate))
        .route("/sessions/{id}/export", get(export))
        .route("/healthz", get(|| async { "ok" }))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Serves until the listener fails or the task is cancelled.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(Arc::new(state))).await
}

async fn create_session(
    State(state): State<Shared>,
    body: Result<Json<SessionConfig>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionSummary>), ApiError> {
    let Json(config) = body.map_err(bad_json)?;
    let id = format!("s{:06}", state.next_id.fetch_add(1, Ordering::SeqCst));
    let session = Session::create(&state.workspace, id.clone(), config, state.clock.now())?;
    state.store.create(&session.manifest)?;
    let summary = session.summary();
    tracing::info!(session = %id, tasks = summary.tasks, "created session");
    state.sessions.write().unwrap().insert(id, Arc::new(SessionHandle::new(session)));
    Ok((StatusCode::CREATED, Json(summary)))
}

async fn list_sessions(State(state): State<Shared>) -> Json<Vec<SessionSummary>> {
    let handles: Vec<Arc<SessionHandle>> = state.sessions.read().unwrap().values().cloned().collect();
    Json(handles.iter().map(|h| h.snapshot().1.clone()).collect())
}

async fn get_session(State(state): State<Shared>, Path(id): Path<String>) -> Result<Json<SessionSummary>, ApiError> {
    Ok(Json(state.handle(&id)?.snapshot().1.clone()))
}

#[derive(Debug, Deserialize)]
pub struct RaterQuery {
    pub rater: Option<String>,
}

fn rater_from(explicit: Option<String>, headers: &HeaderMap) -> Result<String, ApiError> {
    explicit
        .or_else(|| headers.get(RATER_HEADER).and_then(|v| v.to_str().ok()).map(str::to_string))
        .filter(|r| !r.trim().is_empty())
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "validation", "missing rater id"))
}

async fn next_task(
    State(state): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<RaterQuery>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let rater = rater_from(q.rater, &headers)?;
    let handle = state.handle(&id)?;
    let mut session = handle.session.lock().unwrap();
    match session.next_task(&state.workspace, &rater, state.clock.now(), state.lease)? {
        Some(doc) => Ok(Json(doc).into_response()),
        None => Ok(StatusCode::NO_CONTENT.into_response()),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmitBody {
    #[serde(default)]
    pub rater: Option<String>,
    pub task_id: usize,
    #[serde(default)]
    pub lease_id: Option<String>,
    /// One bit per task input, in task order.
    pub ratings: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub accepted: usize,
    pub task_id: usize,
    pub complete: bool,
}

async fn submit_ratings(
    State(state): State<Shared>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Result<Json<SubmitBody>, JsonRejection>,
) -> Result<Json<SubmitResponse>, ApiError> {
    let Json(body) = body.map_err(bad_json)?;
    let rater = rater_from(body.rater.clone(), &headers)?;
    let handle = state.handle(&id)?;
    let mut session = handle.session.lock().unwrap();
    let now = state.clock.now();
    if let Some(lease_id) = &body.lease_id {
        let held = session.tasks.get(body.task_id).is_some_and(|t| {
            t.leases.iter().any(|l| &l.lease_id == lease_id && l.rater == rater && l.expires_at > now)
        });
        let done = session.tasks.get(body.task_id).is_some_and(|t| t.done.contains(&rater));
        if !held && !done {
            return Err(SessionError::LeaseExpired { rater, task: body.task_id }.into());
        }
    }
    let submission = session
        .prepare_submit(&state.workspace, &rater, body.task_id, &body.ratings, now)
        .inspect_err(|e| tracing::info!(session = %id, rater = %rater, arity = body.ratings.len(), "rejected submission: {e}"))?;
    if let Submission::Accept { records, .. } = &submission {
        state.store.append(&id, records)?;
    }
    let accepted = session.commit(&state.workspace, submission);
    tracing::info!(session = %id, rater = %rater, task = body.task_id, accepted, "ratings submitted");
    handle.publish(&session);
    Ok(Json(SubmitResponse { accepted, task_id: body.task_id, complete: session.is_complete() }))
}

async fn current_estimate(State(state): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let snap = state.handle(&id)?.snapshot();
    match &snap.0 {
        EstimateState::Ready(view) => Ok(Json(view.clone()).into_response()),
        EstimateState::TooEarly(msg) => Err(ApiError::new(StatusCode::TOO_EARLY, "too_early", msg.clone())),
    }
}

async fn export(State(state): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let handle = state.handle(&id)?;
    // Hold the session lock so the log is not read mid-append.
    let _guard = handle.session.lock().unwrap();
    let bytes = state.store.read_log(&id)?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], bytes).into_response())
}
