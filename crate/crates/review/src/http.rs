use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dxassist_core::parsing::{align, DEFAULT_ALIGNMENT_THRESHOLD};
use dxassist_core::questionnaire::{registry_json, QuestionnaireId};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::RwLock;
use tower_http::services::ServeDir;

use crate::store::{ConsensusPolicy, DecisionInput, ReviewStore, Task, Verdict};
use crate::ReviewError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone)]
pub struct AppState {
    store: Arc<RwLock<ReviewStore>>,
    /// token → reviewer id
    tokens: Arc<HashMap<String, String>>,
    default_policy: ConsensusPolicy,
}

impl AppState {
    pub fn new(store: ReviewStore, tokens: HashMap<String, String>) -> Self {
        AppState {
            store: Arc::new(RwLock::new(store)),
            tokens: Arc::new(tokens),
            default_policy: ConsensusPolicy::default(),
        }
    }

    /// Policy used by `/api/export` when the request names none.
    pub fn with_default_policy(mut self, policy: ConsensusPolicy) -> Self {
        self.default_policy = policy;
        self
    }

    pub fn store(&self) -> &Arc<RwLock<ReviewStore>> {
        &self.store
    }
}

/// The API under `/api`, plus the review UI bundle from `ui_dir` if given.
pub fn router(state: AppState, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/questionnaires", get(questionnaires))
        .route("/api/queue", get(queue))
        .route("/api/task/{id}", get(task))
        .route("/api/decision", post(decision))
        .route("/api/agreement", get(agreement))
        .route("/api/export", get(export))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

struct ApiError(StatusCode, &'static str, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({
            "schema_version": SCHEMA_VERSION,
            "error": { "code": self.1, "message": self.2 },
        });
        (self.0, Json(body)).into_response()
    }
}

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        let (status, code) = match &e {
            ReviewError::DuplicatePost(_) => (StatusCode::CONFLICT, "duplicate_post"),
            ReviewError::UnknownTask(_) => (StatusCode::NOT_FOUND, "unknown_task"),
            ReviewError::UnknownReviewer(_) => (StatusCode::FORBIDDEN, "unknown_reviewer"),
            ReviewError::UnknownSlug(_) => (StatusCode::UNPROCESSABLE_ENTITY, "unknown_slug"),
            ReviewError::InsufficientOverlap => (StatusCode::CONFLICT, "insufficient_overlap"),
            ReviewError::NothingComplete => (StatusCode::CONFLICT, "nothing_complete"),
            ReviewError::Agreement(_) => (StatusCode::CONFLICT, "agreement"),
            ReviewError::CorruptLog { .. } | ReviewError::Io(_) => {
                (StatusCode::INTERNAL_SERVER_ERROR, "storage")
            }
        };
        ApiError(status, code, e.to_string())
    }
}

fn bad_request(message: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, "bad_request", message.into())
}

type ApiResult = Result<Json<Value>, ApiError>;

fn ok(mut body: Value) -> ApiResult {
    body["schema_version"] = json!(SCHEMA_VERSION);
    Ok(Json(body))
}

fn authenticate(state: &AppState, headers: &HeaderMap) -> Result<String, ApiError> {
    let token = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(str::trim);
    let unauthorized = |m: &str| ApiError(StatusCode::UNAUTHORIZED, "unauthorized", m.into());
    let token = token.ok_or_else(|| unauthorized("missing bearer token"))?;
    state
        .tokens
        .get(token)
        .cloned()
        .ok_or_else(|| unauthorized("unknown token"))
}

fn parse_q(raw: Option<&str>, store: &ReviewStore) -> Result<QuestionnaireId, ApiError> {
    match raw {
        Some(q) => q.parse().map_err(|e: dxassist_core::QuestionnaireError| bad_request(e.to_string())),
        None => {
            let qs = store.questionnaires();
            let mut it = qs.iter();
            match (it.next(), it.next()) {
                (Some(q), None) => Ok(*q),
                (None, _) => Err(ReviewError::NothingComplete.into()),
                _ => Err(bad_request("several questionnaires are queued; pass q=")),
            }
        }
    }
}

async fn health(State(state): State<AppState>) -> ApiResult {
    let store = state.store.read().await;
    ok(json!({ "status": "ok", "tasks": store.tasks().count() }))
}

async fn questionnaires() -> ApiResult {
    let registry: Value = serde_json::from_str(&registry_json()).expect("registry is JSON");
    ok(json!({ "questionnaires": registry }))
}

#[derive(Deserialize)]
struct QueueQuery {
    reviewer: Option<String>,
}

async fn queue(
    State(state): State<AppState>,
    headers: HeaderMap,
    Query(query): Query<QueueQuery>,
) -> ApiResult {
    let me = authenticate(&state, &headers)?;
    let reviewer = query.reviewer.unwrap_or_else(|| me.clone());
    if reviewer != me {
        return Err(ApiError(
            StatusCode::FORBIDDEN,
            "forbidden",
            "a reviewer may only list their own queue".into(),
        ));
    }
    let store = state.store.read().await;
    let tasks: Vec<Value> = store
        .tasks()
        .filter_map(|t| {
            let pending = store.pending_for(t, &reviewer);
            (!pending.is_empty()).then(|| {
                json!({
                    "task_id": t.id,
                    "post_id": t.post.id,
                    "questionnaire": t.questionnaire(),
                    "status": store.status(t),
                    "pending_slugs": pending,
                })
            })
        })
        .collect();
    ok(json!({ "reviewer": reviewer, "tasks": tasks }))
}

fn task_view(store: &ReviewStore, t: &Task, reviewer: &str) -> Value {
    let required = t.required_slugs();
    let symptoms: Vec<Value> = t
        .questionnaire()
        .items()
        .iter()
        .map(|item| {
            let spans: Vec<Value> = t
                .annotation
                .spans(item.slug)
                .iter()
                .map(|s| match align(s, &t.post.body, DEFAULT_ALIGNMENT_THRESHOLD) {
                    Ok(a) => json!(a),
                    Err(_) => json!({ "raw_span": s, "start": null, "end": null, "alignment_score": null }),
                })
                .collect();
            let mine = store.decision(t.id, reviewer, item.slug);
            json!({
                "ordinal": item.ordinal,
                "slug": item.slug,
                "text": item.text,
                "required": required.contains(&item.slug),
                "spans": spans,
                "decision": mine.map(|d| json!({ "verdict": d.verdict, "note": d.note, "timestamp": d.timestamp })),
            })
        })
        .collect();
    json!({
        "task_id": t.id,
        "questionnaire": t.questionnaire(),
        "status": store.status(t),
        "model": t.model,
        "post": t.post,
        "annotations": t.annotation.evidence,
        "symptoms": symptoms,
    })
}

async fn task(State(state): State<AppState>, headers: HeaderMap, Path(id): Path<u64>) -> ApiResult {
    let me = authenticate(&state, &headers)?;
    let store = state.store.read().await;
    let t = store.task(id)?;
    ok(json!({ "task": task_view(&store, t, &me) }))
}

#[derive(Deserialize)]
struct DecisionBody {
    task_id: u64,
    slug: String,
    verdict: Verdict,
    #[serde(default)]
    note: Option<String>,
    #[serde(default)]
    reviewer: Option<String>,
}

async fn decision(
    State(state): State<AppState>,
    headers: HeaderMap,
    body: Result<Json<DecisionBody>, axum::extract::rejection::JsonRejection>,
) -> ApiResult {
    let me = authenticate(&state, &headers)?;
    let Json(body) = body.map_err(|e| bad_request(e.body_text()))?;
    if body.reviewer.as_ref().is_some_and(|r| *r != me) {
        return Err(ApiError(
            StatusCode::FORBIDDEN,
            "forbidden",
            "decision reviewer does not match the token".into(),
        ));
    }
    let mut store = state.store.write().await;
    let status = store.submit_decision(DecisionInput {
        reviewer: me,
        task_id: body.task_id,
        slug: body.slug,
        verdict: body.verdict,
        note: body.note,
    })?;
    ok(json!({ "task_id": body.task_id, "status": status }))
}

#[derive(Deserialize)]
struct QQuery {
    q: Option<String>,
    policy: Option<String>,
}

async fn agreement(
    State(state): State<AppState>,
    headers: HeaderMap,
    Query(query): Query<QQuery>,
) -> ApiResult {
    authenticate(&state, &headers)?;
    let store = state.store.read().await;
    let q = parse_q(query.q.as_deref(), &store)?;
    let report = store.agreement(q)?;
    ok(json!(report))
}

async fn export(
    State(state): State<AppState>,
    headers: HeaderMap,
    Query(query): Query<QQuery>,
) -> ApiResult {
    authenticate(&state, &headers)?;
    let policy: ConsensusPolicy = match query.policy.as_deref() {
        Some(p) => p.parse().map_err(bad_request)?,
        None => state.default_policy,
    };
    let store = state.store.read().await;
    let q = parse_q(query.q.as_deref(), &store)?;
    let subset = store.export_validated(q, policy)?;
    let records: Value = serde_json::from_str(&subset.to_file()).expect("export is JSON");
    ok(json!({
        "questionnaire": q,
        "policy": policy,
        "count": subset.records.len(),
        "records": records,
    }))
}
