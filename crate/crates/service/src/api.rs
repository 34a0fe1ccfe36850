use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;

use crate::engine::{ItemInfo, QueryResponse, Recommendation, SessionConfig, SessionOverrides};
use crate::error::{ApiError, ApiResult};
use crate::session::{HistoryEntry, Session, Sessions};

pub type AppState = Arc<Sessions>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub model_kind: String,
    pub config: SessionConfig,
    pub history: Vec<HistoryEntry>,
    pub created_at: u64,
    pub updated_at: u64,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub n_rated: usize,
    pub n_unrated: usize,
    /// MCVQ: one row of attitude probabilities per VQ. Naive Bayes: a
    /// single row of component probabilities.
    pub latent_posterior: Vec<Vec<f64>>,
    pub pruning_available: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingRequest {
    pub item: usize,
    pub rating: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemsResponse {
    pub rho: usize,
    pub items: Vec<ItemInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationsResponse {
    pub items: Vec<Recommendation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model_kind: String,
    pub n_items: usize,
    pub rho: usize,
    pub sessions: usize,
}

#[derive(Debug, Deserialize)]
pub struct TopN {
    pub top_n: Option<usize>,
}

#[derive(Debug, Deserialize)]
pub struct TopK {
    pub top_k: Option<usize>,
}

const DEFAULT_TOP_N: usize = 10;
const DEFAULT_TOP_K: usize = 5;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/items", get(items))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/query", get(next_query))
        .route("/sessions/{id}/ratings", post(submit_rating))
        .route("/sessions/{id}/recommendations", get(recommendations))
        .fallback(|| async { ApiError::NotFound("no such endpoint".into()) })
        .layer(CorsLayer::permissive())
        .with_state(state)
}

pub fn view(sessions: &Sessions, s: &Session) -> SessionView {
    let engine = sessions.engine();
    SessionView {
        id: s.id.clone(),
        model_kind: engine.model_kind().to_string(),
        config: s.config.clone(),
        history: s.history.clone(),
        created_at: s.created_at,
        updated_at: s.updated_at,
        diagnostics: Diagnostics {
            n_rated: s.state.n_observed(),
            n_unrated: engine.n_items() - s.state.n_observed(),
            latent_posterior: s.state.latent_posterior(),
            pruning_available: engine.tables().is_some(),
        },
    }
}

/// Runs model work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::Internal(format!("worker failed: {e}")))?
}

async fn healthz(State(s): State<AppState>) -> Json<Health> {
    let e = s.engine();
    Json(Health {
        status: "ok".into(),
        model_kind: e.model_kind().to_string(),
        n_items: e.n_items(),
        rho: e.rho(),
        sessions: s.len(),
    })
}

async fn items(State(s): State<AppState>) -> Json<ItemsResponse> {
    Json(ItemsResponse { rho: s.engine().rho(), items: s.engine().items() })
}

async fn create_session(
    State(s): State<AppState>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<SessionView>)> {
    let overrides: SessionOverrides = if body.iter().all(u8::is_ascii_whitespace) {
        SessionOverrides::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::BadRequest(format!("invalid session body: {e}")))?
    };
    let config = s.engine().resolve_config(&overrides)?;
    let session = blocking({
        let s = s.clone();
        move || s.create(config)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(view(&s, &session))))
}

async fn get_session(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    s.read(&id, |session| Ok(Json(view(&s, session))))
}

async fn next_query(
    State(s): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<TopK>, QueryRejection>,
) -> ApiResult<Json<QueryResponse>> {
    let top_k = q.map_err(|e| ApiError::BadRequest(e.body_text()))?.top_k.unwrap_or(DEFAULT_TOP_K);
    blocking(move || s.read(&id, |session| s.engine().next_query(&session.state, &session.config, top_k)))
        .await
        .map(Json)
}

async fn submit_rating(
    State(s): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<RatingRequest>, JsonRejection>,
) -> ApiResult<Json<SessionView>> {
    let Json(req) = body.map_err(|e| match e {
        JsonRejection::JsonDataError(e) => ApiError::Validation(e.body_text()),
        other => ApiError::BadRequest(other.body_text()),
    })?;
    blocking(move || {
        let session = s.rate(&id, req.item, req.rating)?;
        Ok(Json(view(&s, &session)))
    })
    .await
}

async fn recommendations(
    State(s): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<TopN>, QueryRejection>,
) -> ApiResult<Json<RecommendationsResponse>> {
    let top_n = q.map_err(|e| ApiError::BadRequest(e.body_text()))?.top_n.unwrap_or(DEFAULT_TOP_N);
    blocking(move || {
        s.read(&id, |session| {
            Ok(RecommendationsResponse { items: s.engine().recommendations(&session.state, top_n)? })
        })
    })
    .await
    .map(Json)
}
