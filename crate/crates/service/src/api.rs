//! HTTP interface.
//!
//! | method | path | body | reply |
//! |---|---|---|---|
//! | POST | /datasets | manifest | `{handle, created, dataset}` |
//! | GET | /datasets | | `[dataset info]` |
//! | POST | /sessions | `{dataset, query_id \| descriptor, method?}` | session summary |
//! | GET | /sessions/{id}/results?offset&limit | | page |
//! | POST | /sessions/{id}/feedback | `{marks: [{id, relevant}], method?}` | `{entry, session}` |
//! | GET | /sessions/{id}/history | | `[history entry]` |
//! | DELETE | /sessions/{id} | | 204 |
//!
//! Errors come back as `{"error": kind, "message": text}`.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cbir_core::feedback::{FeedbackConfig, Method};
use cbir_core::Error;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dataset::{DatasetInfo, DatasetManifest, DatasetRegistry};
use crate::session::{HistoryEntry, Mark, Page, QueryInput, Session, SessionStore, SessionSummary};

pub const DEFAULT_PAGE: usize = 20;
pub const MAX_PAGE: usize = 1000;

pub struct AppState {
    pub datasets: DatasetRegistry,
    pub sessions: SessionStore,
    pub feedback: FeedbackConfig,
    pub default_method: Method,
}

impl AppState {
    pub fn new(sessions: SessionStore, feedback: FeedbackConfig, default_method: Method) -> Self {
        AppState { datasets: DatasetRegistry::default(), sessions, feedback, default_method }
    }
}

pub struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError(Error::Validation(e.body_text()))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind) = match &self.0 {
            Error::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            Error::Validation(_) => (StatusCode::BAD_REQUEST, "validation"),
            Error::Dimension { .. } => (StatusCode::BAD_REQUEST, "dimension"),
            Error::Parameter(_) => (StatusCode::BAD_REQUEST, "parameter"),
            Error::Normalization => (StatusCode::BAD_REQUEST, "normalization"),
            Error::Ingest { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "ingest"),
            Error::EmptyIndex => (StatusCode::UNPROCESSABLE_ENTITY, "empty_index"),
            Error::Feedback(_) => (StatusCode::UNPROCESSABLE_ENTITY, "feedback"),
            Error::Conditioning(_) => (StatusCode::UNPROCESSABLE_ENTITY, "conditioning"),
            Error::Metric(_) => (StatusCode::UNPROCESSABLE_ENTITY, "metric"),
            Error::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "io"),
        };
        (status, Json(json!({ "error": kind, "message": self.0.to_string() }))).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/datasets", post(ingest_dataset).get(list_datasets))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", axum::routing::delete(delete_session).get(session_summary))
        .route("/sessions/{id}/results", get(results))
        .route("/sessions/{id}/feedback", post(feedback))
        .route("/sessions/{id}/history", get(history))
        .with_state(state)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> cbir_core::Result<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError(Error::Io(format!("worker failed: {e}"))))?.map_err(ApiError)
}

#[derive(Serialize)]
struct IngestReply {
    handle: String,
    created: bool,
    dataset: DatasetInfo,
}

async fn ingest_dataset(
    State(state): State<Arc<AppState>>,
    body: Result<Json<DatasetManifest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<IngestReply>)> {
    let Json(manifest) = body?;
    let st = state.clone();
    let (ds, created) = blocking(move || st.datasets.ingest(&manifest)).await?;
    let status = if created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(IngestReply { handle: ds.handle.clone(), created, dataset: ds.info() })))
}

async fn list_datasets(State(state): State<Arc<AppState>>) -> Json<Vec<DatasetInfo>> {
    Json(state.datasets.list())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub dataset: String,
    #[serde(default)]
    pub query_id: Option<String>,
    #[serde(default)]
    pub descriptor: Option<Vec<f32>>,
    #[serde(default)]
    pub method: Option<Method>,
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<SessionSummary>)> {
    let Json(req) = body?;
    let query = match (req.query_id, req.descriptor) {
        (Some(query_id), None) => QueryInput::Item { query_id },
        (None, Some(descriptor)) => QueryInput::Descriptor { descriptor },
        _ => return Err(Error::Validation("give exactly one of `query_id` and `descriptor`".into()).into()),
    };
    let dataset = state.datasets.get(&req.dataset)?;
    let method = req.method.unwrap_or(state.default_method);
    let st = state.clone();
    let summary = blocking(move || {
        let id = st.sessions.next_id();
        let session = Session::new(id, dataset, query, method, st.feedback.clone())?;
        st.sessions.persist(&session)?;
        let summary = session.summary();
        st.sessions.insert(session);
        Ok(summary)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(summary)))
}

async fn session_summary(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<SessionSummary>> {
    let s = state.sessions.get(&id)?;
    let guard = s.lock().await;
    Ok(Json(guard.summary()))
}

#[derive(Debug, Deserialize)]
pub struct PageQuery {
    #[serde(default)]
    pub offset: usize,
    #[serde(default)]
    pub limit: Option<usize>,
}

async fn results(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<PageQuery>,
) -> ApiResult<Json<Page>> {
    let limit = q.limit.unwrap_or(DEFAULT_PAGE);
    if limit > MAX_PAGE {
        return Err(Error::Validation(format!("limit {limit} exceeds {MAX_PAGE}")).into());
    }
    let s = state.sessions.get(&id)?;
    let guard = s.lock().await;
    Ok(Json(guard.results(q.offset, limit)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackRequest {
    #[serde(default)]
    pub marks: Vec<Mark>,
    #[serde(default)]
    pub method: Option<Method>,
}

#[derive(Serialize)]
struct FeedbackReply {
    entry: HistoryEntry,
    session: SessionSummary,
}

async fn feedback(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<FeedbackRequest>, JsonRejection>,
) -> ApiResult<Json<FeedbackReply>> {
    let Json(req) = body?;
    let s = state.sessions.get(&id)?;
    // The async mutex queues waiters in arrival order.
    let mut guard = s.lock_owned().await;
    let st = state.clone();
    let reply = blocking(move || {
        let entry = guard.submit_feedback(&req.marks, req.method)?.clone();
        st.sessions.persist(&guard)?;
        Ok(FeedbackReply { entry, session: guard.summary() })
    })
    .await?;
    Ok(Json(reply))
}

async fn history(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Vec<HistoryEntry>>> {
    let s = state.sessions.get(&id)?;
    let guard = s.lock().await;
    Ok(Json(guard.history().to_vec()))
}

async fn delete_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    state.sessions.remove(&id)?;
    Ok(StatusCode::NO_CONTENT)
}
