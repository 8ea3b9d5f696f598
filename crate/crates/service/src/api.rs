//! JSON-over-HTTP endpoints. Every failure is an [`ApiError`] envelope.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{FromRequest, FromRequestParts, Path, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{middleware, Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use genedit_core::editflow::{DraftContent, EditDraft, FeedbackSession, RegressionReport, SessionStatus};
use genedit_core::generation::{generate, GenerationStatus, GenerationTrace};
use genedit_core::exec::SqlExecutor;
use genedit_core::knowledge::{AuditAction, AuditFilter, Edit, EditStatus, IntentIds};

use crate::error::{ApiError, ErrorCode};
use crate::{auth, idempotency};
use crate::state::Shared;

#[derive(FromRequest)]
#[from_request(via(axum::Json), rejection(ApiError))]
pub struct ApiJson<T>(pub T);

#[derive(FromRequestParts)]
#[from_request(via(axum::extract::Query), rejection(ApiError))]
pub struct ApiQuery<T>(pub T);

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::bad_request(r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        ApiError::bad_request(r.body_text())
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Runs blocking core work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

pub fn router(state: Shared) -> Router {
    let cache = state.idempotency.clone();
    Router::new()
        .route("/api/health", get(health))
        .route("/api/generate", post(generate_query))
        .route("/api/traces/{id}", get(get_trace))
        .route("/api/traces/{id}/execute", post(execute_trace))
        .route("/api/feedback", post(open_feedback))
        .route("/api/sessions", get(list_sessions))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/feedback", post(more_feedback))
        .route("/api/sessions/{id}/stage", post(stage))
        .route("/api/sessions/{id}/unstage", post(unstage))
        .route("/api/sessions/{id}/regenerate", post(regenerate))
        .route("/api/sessions/{id}/submit", post(submit))
        .route("/api/sessions/{id}/approve", post(approve_session))
        .route("/api/sessions/{id}/abandon", post(abandon))
        .route("/api/edits/{id}", get(get_edit))
        .route("/api/edits/{id}/approve", post(approve_edit))
        .route("/api/knowledge", get(knowledge))
        .route("/api/knowledge/edits", post(direct_edit))
        .route("/api/versions", get(versions))
        .route("/api/audit", get(audit))
        .route("/api/checkpoints/{version}/revert", post(revert))
        .route("/api/metrics/edits", get(edit_metrics))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .method_not_allowed_fallback(|| async {
            ApiError::new(ErrorCode::BadRequest, "method not allowed on this endpoint")
        })
        .layer(middleware::from_fn_with_state(cache, idempotency::layer))
        .layer(middleware::from_fn_with_state(state.clone(), auth::layer))
        .with_state(state)
}

async fn health(State(state): State<Shared>) -> Json<Value> {
    Json(json!({ "status": "ok", "head": state.store.head() }))
}

#[derive(Debug, Default, Deserialize)]
pub struct DebugParam {
    #[serde(default)]
    pub debug: Option<String>,
}

impl DebugParam {
    fn on(&self, state: &Shared) -> bool {
        state.debug_prompts && matches!(self.debug.as_deref(), Some("1" | "true"))
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ContextSummary {
    pub intents: Vec<String>,
    pub examples: Vec<Value>,
    pub instructions: Vec<Value>,
    pub schema: Vec<Value>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

fn context_summary(trace: &GenerationTrace) -> ContextSummary {
    let c = &trace.context;
    ContextSummary {
        intents: c.intents.iter().cloned().collect(),
        examples: c
            .examples
            .iter()
            .map(|s| json!({ "id": s.record.id, "score": s.score, "description": s.record.nl_description, "sql": s.record.substatement.text }))
            .collect(),
        instructions: c
            .instructions
            .iter()
            .map(|s| json!({ "id": s.record.id, "score": s.score, "text": s.record.text }))
            .collect(),
        schema: c
            .schema
            .iter()
            .map(|s| json!({ "table": s.record.table, "column": s.record.column, "score": s.score }))
            .collect(),
        notes: c.notes.clone(),
    }
}

/// What the generate and regenerate endpoints return.
fn trace_response(trace: &GenerationTrace, debug: bool) -> Value {
    let mut out = json!({
        "trace_id": trace.request_id,
        "status": trace.status,
        "query": trace.query,
        "db_id": trace.db_id,
        "knowledge_version": trace.knowledge_label,
        "sql": trace.final_sql,
        "plan": trace.plan,
        "context": context_summary(trace),
        "nl_summary": trace.nl_summary,
        "retries_used": trace.retries_used,
        "errors": trace.errors,
    });
    if debug {
        out["prompts"] = json!(trace.attempts.iter().map(|a| a.prompt.as_str()).collect::<Vec<_>>());
    }
    out
}

/// The stored trace, with raw prompts removed unless debugging is allowed.
fn public_trace(trace: &GenerationTrace, debug: bool) -> Value {
    let mut value = serde_json::to_value(trace).unwrap_or(Value::Null);
    if !debug {
        if let Some(attempts) = value.get_mut("attempts").and_then(Value::as_array_mut) {
            for a in attempts {
                if let Some(obj) = a.as_object_mut() {
                    obj.remove("prompt");
                }
            }
        }
    }
    value
}

fn record_trace(state: &Shared, trace: &GenerationTrace) -> Result<(), ApiError> {
    state
        .traces
        .put(trace, state.store.clock().now())
        .map_err(|e| ApiError::internal(format!("cannot persist trace: {e}")))
}

#[derive(Debug, Deserialize)]
pub struct GenerateRequest {
    pub query: String,
    #[serde(default)]
    pub version: Option<String>,
    #[serde(default)]
    pub db_id: Option<String>,
}

async fn generate_query(
    State(state): State<Shared>,
    ApiQuery(debug): ApiQuery<DebugParam>,
    ApiJson(body): ApiJson<GenerateRequest>,
) -> ApiResult<Value> {
    if body.query.trim().is_empty() {
        return Err(ApiError::bad_request("query is empty"));
    }
    let debug = debug.on(&state);
    blocking(move || {
        let version = body.version.unwrap_or_else(|| state.store.head());
        let snapshot = state.store.snapshot(&version)?;
        let db_id = body.db_id.unwrap_or_else(|| state.default_db.clone());
        if !state.executor.databases().contains(&db_id) {
            return Err(ApiError::not_found(format!("unknown database `{db_id}`")));
        }
        let trace = generate(
            body.query.trim(),
            &db_id,
            &snapshot,
            state.provider.as_ref(),
            state.executor.as_ref(),
            &state.generation,
        );
        record_trace(&state, &trace)?;
        if trace.status == GenerationStatus::Failed {
            return Err(ApiError::new(ErrorCode::ProviderUnavailable, "the provider did not answer")
                .with_detail(json!({ "trace_id": trace.request_id, "errors": trace.errors })));
        }
        Ok(Json(trace_response(&trace, debug)))
    })
    .await
}

fn find_trace(state: &Shared, id: &str) -> Result<Arc<GenerationTrace>, ApiError> {
    state.traces.get(id).ok_or_else(|| ApiError::not_found(format!("unknown trace `{id}`")))
}

async fn get_trace(
    State(state): State<Shared>,
    Path(id): Path<String>,
    ApiQuery(debug): ApiQuery<DebugParam>,
) -> ApiResult<Value> {
    let trace = find_trace(&state, &id)?;
    Ok(Json(public_trace(&trace, debug.on(&state))))
}

async fn execute_trace(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<Value> {
    let trace = find_trace(&state, &id)?;
    let Some(sql) = trace.final_sql.clone() else {
        return Err(ApiError::conflict(format!("trace `{id}` has no final SQL")));
    };
    blocking(move || {
        let rs = state.executor.execute(&trace.db_id, &sql)?;
        Ok(Json(json!({ "columns": rs.columns, "row_count": rs.rows.len(), "rows": rs.rows })))
    })
    .await
}

#[derive(Debug, Deserialize)]
pub struct FeedbackRequest {
    pub trace_id: String,
    pub text: String,
}

#[derive(Debug, Serialize)]
struct SessionView {
    session: FeedbackSession,
    edits: Vec<Edit>,
}

async fn open_feedback(State(state): State<Shared>, ApiJson(body): ApiJson<FeedbackRequest>) -> ApiResult<Value> {
    if body.text.trim().is_empty() {
        return Err(ApiError::bad_request("feedback text is empty"));
    }
    let trace = find_trace(&state, &body.trace_id)?;
    blocking(move || {
        let (session, edits) = state.flow.open_session(&trace, &body.text, state.provider.as_ref())?;
        Ok(Json(json!({ "session_id": session.id, "session": session, "recommended_edits": edits })))
    })
    .await
}

async fn list_sessions(State(state): State<Shared>) -> Json<Value> {
    let mut sessions = state.flow.sessions();
    sessions.sort_by(|a, b| b.created_at.cmp(&a.created_at).then_with(|| b.id.cmp(&a.id)));
    Json(json!({ "sessions": sessions }))
}

async fn get_session(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<Value> {
    let session = state.flow.session(&id)?;
    let edits = state.flow.session_edits(&id)?;
    Ok(Json(serde_json::to_value(SessionView { session, edits }).unwrap_or(Value::Null)))
}

#[derive(Debug, Deserialize)]
pub struct MoreFeedbackRequest {
    /// Trace the feedback is about; the session's latest trace otherwise.
    #[serde(default)]
    pub trace_id: Option<String>,
    pub text: String,
}

async fn more_feedback(
    State(state): State<Shared>,
    Path(id): Path<String>,
    ApiJson(body): ApiJson<MoreFeedbackRequest>,
) -> ApiResult<Value> {
    if body.text.trim().is_empty() {
        return Err(ApiError::bad_request("feedback text is empty"));
    }
    let lock = state.session_lock(&id);
    let _held = lock.lock().await;
    let session = state.flow.session(&id)?;
    let trace_id = body
        .trace_id
        .or_else(|| session.iterations.last().map(|i| i.trace_id.clone()))
        .unwrap_or(session.trace_id);
    let trace = find_trace(&state, &trace_id)?;
    blocking(move || {
        let edits = state.flow.add_feedback(&id, &trace, &body.text, state.provider.as_ref())?;
        Ok(Json(json!({ "session_id": id, "recommended_edits": edits })))
    })
    .await
}

#[derive(Debug, Deserialize)]
pub struct StageRequest {
    pub edit_ids: Vec<String>,
    #[serde(default)]
    pub revisions: BTreeMap<String, DraftContent>,
}

fn staged_summary(state: &Shared, session_id: &str, label: String) -> Result<Value, ApiError> {
    let edits = state.flow.session_edits(session_id)?;
    let staged: Vec<&Edit> = edits.iter().filter(|e| e.status == EditStatus::Staged).collect();
    Ok(json!({
        "session_id": session_id,
        "knowledge_label": label,
        "staged_edit_ids": staged.iter().map(|e| e.id.as_str()).collect::<Vec<_>>(),
        "staged_edits": staged,
    }))
}

async fn stage(
    State(state): State<Shared>,
    Path(id): Path<String>,
    ApiJson(body): ApiJson<StageRequest>,
) -> ApiResult<Value> {
    let lock = state.session_lock(&id);
    let _held = lock.lock().await;
    blocking(move || {
        let snapshot = state.flow.stage(&id, &body.edit_ids, &body.revisions)?;
        Ok(Json(staged_summary(&state, &id, snapshot.label)?))
    })
    .await
}

#[derive(Debug, Deserialize)]
pub struct UnstageRequest {
    pub edit_ids: Vec<String>,
}

async fn unstage(
    State(state): State<Shared>,
    Path(id): Path<String>,
    ApiJson(body): ApiJson<UnstageRequest>,
) -> ApiResult<Value> {
    let lock = state.session_lock(&id);
    let _held = lock.lock().await;
    blocking(move || {
        let snapshot = state.flow.unstage(&id, &body.edit_ids)?;
        Ok(Json(staged_summary(&state, &id, snapshot.label)?))
    })
    .await
}

async fn regenerate(
    State(state): State<Shared>,
    Path(id): Path<String>,
    ApiQuery(debug): ApiQuery<DebugParam>,
) -> ApiResult<Value> {
    let debug = debug.on(&state);
    let lock = state.session_lock(&id);
    let _held = lock.lock().await;
    blocking(move || {
        let trace =
            state.flow.regenerate(&id, state.provider.as_ref(), state.executor.as_ref(), &state.generation)?;
        record_trace(&state, &trace)?;
        let iteration = state.flow.session(&id)?.iterations.len();
        let mut out = trace_response(&trace, debug);
        out["session_id"] = json!(id);
        out["iteration"] = json!(iteration);
        Ok(Json(out))
    })
    .await
}

fn submission_view(
    session_id: &str,
    submitted: Vec<String>,
    repeated: bool,
    status: SessionStatus,
    report: Option<RegressionReport>,
) -> Value {
    json!({
        "session_id": session_id,
        "submitted_edit_ids": submitted,
        "repeated": repeated,
        "session_status": status,
        "verdict": report.as_ref().map(|r| r.verdict),
        "regression": report,
    })
}

/// Submits the staged edits and runs the golden regression gate on them.
async fn submit(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<Value> {
    let lock = state.session_lock(&id);
    let _held = lock.lock().await;
    blocking(move || {
        let submission = state.flow.submit(&id)?;
        let existing = state.flow.session(&id)?.regression;
        let report = match existing {
            Some(r) if submission.repeated => r,
            _ => state.flow.run_regression(
                &id,
                &state.golden,
                state.provider.as_ref(),
                state.executor.as_ref(),
                &state.generation,
                state.workers,
            )?,
        };
        let status = state.flow.session(&id)?.status;
        Ok(Json(submission_view(&id, submission.submitted_edit_ids, submission.repeated, status, Some(report))))
    })
    .await
}

#[derive(Debug, Default, Deserialize)]
pub struct ActorRequest {
    #[serde(default)]
    pub actor: Option<String>,
}

impl ActorRequest {
    fn actor(&self) -> String {
        self.actor.clone().filter(|a| !a.trim().is_empty()).unwrap_or_else(|| "sme".into())
    }
}

/// The body is optional; an empty one means the default actor.
fn optional_actor(body: &Bytes) -> Result<ActorRequest, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(ActorRequest::default());
    }
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid body: {e}")))
}

async fn approve_edit(
    State(state): State<Shared>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Value> {
    let actor = optional_actor(&body)?.actor();
    let session_id = state.flow.edit(&id)?.session_id;
    let lock = state.session_lock(&session_id);
    let _held = lock.lock().await;
    blocking(move || {
        let version = state.flow.approve_edit(&id, &actor)?;
        let edit = state.flow.edit(&id)?;
        let session = state.flow.session(&session_id)?;
        Ok(Json(json!({
            "edit_id": id,
            "edit_status": edit.status,
            "version_id": version,
            "session_id": session_id,
            "session_status": session.status,
        })))
    })
    .await
}

async fn approve_session(
    State(state): State<Shared>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Value> {
    let actor = optional_actor(&body)?.actor();
    let lock = state.session_lock(&id);
    let _held = lock.lock().await;
    blocking(move || {
        let version = state.flow.approve_session(&id, &actor)?;
        let session = state.flow.session(&id)?;
        Ok(Json(json!({ "session_id": id, "version_id": version, "session_status": session.status })))
    })
    .await
}

async fn abandon(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<Value> {
    let lock = state.session_lock(&id);
    let _held = lock.lock().await;
    state.flow.abandon(&id)?;
    Ok(Json(json!({ "session_id": id, "session_status": state.flow.session(&id)?.status })))
}

async fn get_edit(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<Edit> {
    Ok(Json(state.flow.edit(&id)?))
}

#[derive(Debug, Deserialize)]
pub struct DirectEditRequest {
    pub edit: EditDraft,
    #[serde(default)]
    pub actor: Option<String>,
}

/// Library edit: a one-edit session, submitted at once and gated by the
/// same regression run.
async fn direct_edit(State(state): State<Shared>, ApiJson(body): ApiJson<DirectEditRequest>) -> ApiResult<Value> {
    let actor = body.actor.clone().unwrap_or_else(|| "sme".into());
    blocking(move || {
        let (session, edit) = state.flow.direct_edit(&body.edit, &actor)?;
        let report = state.flow.run_regression(
            &session.id,
            &state.golden,
            state.provider.as_ref(),
            state.executor.as_ref(),
            &state.generation,
            state.workers,
        )?;
        let status = state.flow.session(&session.id)?.status;
        let mut out = submission_view(&session.id, vec![edit.id.clone()], false, status, Some(report));
        out["edit"] = serde_json::to_value(state.flow.edit(&edit.id)?).unwrap_or(Value::Null);
        Ok(Json(out))
    })
    .await
}

/// `?version=` and any number of `?intent=` (name or id).
async fn knowledge(State(state): State<Shared>, ApiQuery(params): ApiQuery<Vec<(String, String)>>) -> ApiResult<Value> {
    let version = params
        .iter()
        .find(|(k, _)| k == "version")
        .map(|(_, v)| v.clone())
        .unwrap_or_else(|| state.store.head());
    let snapshot = state.store.snapshot(&version)?;
    let records = &snapshot.records;
    let wanted: Vec<&str> = params.iter().filter(|(k, _)| k == "intent").map(|(_, v)| v.as_str()).collect();
    let intents: IntentIds = if wanted.is_empty() {
        records.all_intent_ids()
    } else {
        let mut ids = BTreeSet::new();
        for w in wanted {
            let found = records.intents.iter().find(|i| i.id == w || i.name.eq_ignore_ascii_case(w));
            match found {
                Some(i) => ids.insert(i.id.clone()),
                None => return Err(ApiError::not_found(format!("unknown intent `{w}`"))),
            };
        }
        ids
    };
    let view = snapshot.view(&intents);
    let chosen: Vec<_> = records.intents.iter().filter(|i| intents.contains(&i.id)).collect();
    Ok(Json(json!({ "version": version, "head": state.store.head(), "intents": chosen, "view": view })))
}

async fn versions(State(state): State<Shared>) -> Json<Value> {
    let mut versions = state.store.versions();
    versions.reverse();
    Json(json!({ "head": state.store.head(), "versions": versions }))
}

#[derive(Debug, Default, Deserialize)]
pub struct AuditParams {
    #[serde(default)]
    pub action: Option<AuditAction>,
    #[serde(default)]
    pub feedback_id: Option<String>,
    #[serde(default)]
    pub limit: Option<usize>,
}

async fn audit(State(state): State<Shared>, ApiQuery(p): ApiQuery<AuditParams>) -> Json<Value> {
    let filter = AuditFilter { action: p.action, feedback_id: p.feedback_id, limit: p.limit };
    Json(json!({ "entries": state.store.list_audit(&filter) }))
}

async fn revert(
    State(state): State<Shared>,
    Path(version): Path<String>,
    body: Bytes,
) -> ApiResult<Value> {
    let actor = optional_actor(&body)?.actor();
    blocking(move || {
        let new_version = state.store.revert(&version, &actor)?;
        Ok(Json(json!({ "reverted_to": version, "version_id": new_version, "head": state.store.head() })))
    })
    .await
}

#[derive(Debug, Default, Deserialize)]
pub struct PeriodParams {
    #[serde(default)]
    pub from: Option<DateTime<Utc>>,
    #[serde(default)]
    pub to: Option<DateTime<Utc>>,
}

async fn edit_metrics(State(state): State<Shared>, ApiQuery(p): ApiQuery<PeriodParams>) -> Json<Value> {
    Json(serde_json::to_value(state.flow.edit_metrics(p.from, p.to)).unwrap_or(Value::Null))
}

/// Status code an envelope maps to; exposed for clients and tests.
pub fn status_of(code: ErrorCode) -> StatusCode {
    code.status()
}
