//! HTTP routes, all under `/v1`.
//!
//! | method | path | body | response |
//! |---|---|---|---|
//! | GET | `/v1/pools` | | pool names and sizes |
//! | GET | `/v1/features` | | feature numbers, labels, descriptions |
//! | POST | `/v1/sessions` | [`CreateSessionRequest`] | [`SessionResponse`] |
//! | GET | `/v1/sessions/{id}` | | [`SessionResponse`] |
//! | GET | `/v1/sessions/{id}/query` | | [`QueryResponse`] |
//! | POST | `/v1/sessions/{id}/answers` | answer | [`BeliefSummaryResponse`] |
//! | GET | `/v1/sessions/{id}/belief` | | [`BeliefSummaryResponse`] |
//! | GET | `/v1/sessions/{id}/validation` | | [`ValidationResponse`] |
//! | POST | `/v1/sessions/{id}/validation` | [`VoteRequest`] | [`ValidationResponse`] |
//! | GET | `/v1/sessions/{id}/log` | | answer log file |

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::Serialize;

use crate::session::{SessionError, SessionManager};
use crate::wire::*;

pub struct ApiError(SessionError);

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        ApiError(e)
    }
}

impl From<WireError> for ApiError {
    fn from(e: WireError) -> Self {
        ApiError(SessionError::InvalidRequest(e.to_string()))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            SessionError::UnknownPool(_) | SessionError::UnknownSession(_) => StatusCode::NOT_FOUND,
            SessionError::WrongPhase { .. }
            | SessionError::StaleAnswer { .. }
            | SessionError::DuplicateVote(_)
            | SessionError::PoolExhausted
            | SessionError::AwaitingPartner => StatusCode::CONFLICT,
            SessionError::InvalidRequest(_) => StatusCode::UNPROCESSABLE_ENTITY,
            SessionError::Corrupt(_) | SessionError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = ErrorResponse {
            schema: ERROR_SCHEMA.into(),
            error: self.0.code().into(),
            message: self.0.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

type Mgr = Arc<SessionManager>;

/// Run blocking session work off the async workers.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, SessionError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(SessionError::Io(e.to_string())))?
        .map_err(ApiError)
}

#[derive(Serialize)]
struct PoolInfo {
    name: String,
    queries: usize,
}

#[derive(Serialize)]
struct PoolsResponse {
    schema: &'static str,
    pools: Vec<PoolInfo>,
}

async fn pools(State(m): State<Mgr>) -> Json<PoolsResponse> {
    let pools = m
        .pool_names()
        .into_iter()
        .map(|(name, queries)| PoolInfo { name, queries })
        .collect();
    Json(PoolsResponse {
        schema: "richpref.pools/1",
        pools,
    })
}

async fn features() -> Json<FeaturesResponse> {
    Json(FeaturesResponse {
        schema: FEATURES_SCHEMA,
        features: feature_table(),
    })
}

fn body_text(body: &Bytes) -> Result<&str, ApiError> {
    std::str::from_utf8(body)
        .map_err(|_| ApiError(SessionError::InvalidRequest("body is not UTF-8".into())))
}

async fn create(
    State(m): State<Mgr>,
    body: Bytes,
) -> Result<(StatusCode, Json<SessionResponse>), ApiError> {
    let req = parse_create_session(body_text(&body)?)?;
    let out = blocking(move || m.create(&req)).await?;
    Ok((StatusCode::CREATED, Json(out)))
}

async fn describe(
    State(m): State<Mgr>,
    Path(id): Path<String>,
) -> Result<Json<SessionResponse>, ApiError> {
    Ok(Json(blocking(move || m.describe(&id)).await?))
}

async fn query(
    State(m): State<Mgr>,
    Path(id): Path<String>,
) -> Result<Json<QueryResponse>, ApiError> {
    Ok(Json(blocking(move || m.next_query(&id)).await?))
}

async fn answer(
    State(m): State<Mgr>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<BeliefSummaryResponse>, ApiError> {
    let a = parse_answer_payload(body_text(&body)?)?;
    Ok(Json(blocking(move || m.submit(&id, &a)).await?))
}

async fn belief(
    State(m): State<Mgr>,
    Path(id): Path<String>,
) -> Result<Json<BeliefSummaryResponse>, ApiError> {
    Ok(Json(blocking(move || m.belief_summary(&id)).await?))
}

async fn validation(
    State(m): State<Mgr>,
    Path(id): Path<String>,
) -> Result<Json<ValidationResponse>, ApiError> {
    Ok(Json(blocking(move || m.validation(&id)).await?))
}

async fn vote(
    State(m): State<Mgr>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<ValidationResponse>, ApiError> {
    let v = parse_vote(body_text(&body)?)?;
    Ok(Json(blocking(move || m.vote(&id, &v)).await?))
}

async fn export_log(State(m): State<Mgr>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let text = blocking(move || m.export_log(&id)).await?;
    Ok(([(header::CONTENT_TYPE, "application/json")], text).into_response())
}

pub fn router(manager: Arc<SessionManager>) -> Router {
    Router::new()
        .route("/v1/pools", get(pools))
        .route("/v1/features", get(features))
        .route("/v1/sessions", axum::routing::post(create))
        .route("/v1/sessions/{id}", get(describe))
        .route("/v1/sessions/{id}/query", get(query))
        .route("/v1/sessions/{id}/answers", axum::routing::post(answer))
        .route("/v1/sessions/{id}/belief", get(belief))
        .route("/v1/sessions/{id}/validation", get(validation).post(vote))
        .route("/v1/sessions/{id}/log", get(export_log))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(manager)
}

/// Serve until ctrl-c.
pub async fn serve(
    manager: Arc<SessionManager>,
    addr: std::net::SocketAddr,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(manager))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
