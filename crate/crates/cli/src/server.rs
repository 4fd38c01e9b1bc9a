//! HTTP review service over a persisted label space.
//!
//! Readers share a lock; every mutation is applied to a copy, saved, and only
//! then swapped in, so a failed save leaves both disk and memory unchanged.
//! Clients may send `expected_version` to get a conflict instead of acting on
//! a stale view.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::{Path as UrlPath, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::RwLock;
use tower_http::services::ServeDir;

use labelwright::classifier::Prediction;
use labelwright::corpus::Chunk;
use labelwright::labelspace::{Label, LabelId, LabelSpace, PairId, Resolution};
use labelwright::review::{review_queue, ReviewItem, EVIDENCE_PER_LABEL};
use labelwright::Error;

pub struct ReviewState {
    space: RwLock<LabelSpace>,
    path: PathBuf,
    chunks: Vec<Chunk>,
    predictions: Vec<Prediction>,
    token: Option<String>,
}

impl ReviewState {
    pub fn new(
        space: LabelSpace,
        path: PathBuf,
        chunks: Vec<Chunk>,
        predictions: Vec<Prediction>,
        token: Option<String>,
    ) -> Self {
        ReviewState {
            space: RwLock::new(space),
            path,
            chunks,
            predictions,
            token,
        }
    }

    pub async fn snapshot(&self) -> LabelSpace {
        self.space.read().await.clone()
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ResolutionBody {
    pub resolution: Resolution,
    #[serde(default)]
    pub expected_version: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RenameBody {
    pub name: String,
    #[serde(default)]
    pub expected_version: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PairsResponse {
    pub version: u64,
    pub pairs: Vec<ReviewItem>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LabelsResponse {
    pub version: u64,
    pub labels: Vec<Label>,
    pub active: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MutationResponse {
    pub version: u64,
}

pub struct ApiError {
    status: StatusCode,
    message: String,
    version: u64,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(json!({ "error": self.message, "version": self.version })),
        )
            .into_response()
    }
}

fn api_error(e: Error, version: u64) -> ApiError {
    let status = match &e {
        Error::State(_) => StatusCode::CONFLICT,
        Error::Collision(_) | Error::Validation(_) => StatusCode::UNPROCESSABLE_ENTITY,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    };
    ApiError {
        status,
        message: e.to_string(),
        version,
    }
}

async fn mutate(
    state: &ReviewState,
    expected: Option<u64>,
    exists: impl FnOnce(&LabelSpace) -> Option<String>,
    change: impl FnOnce(&mut LabelSpace) -> labelwright::Result<u64>,
) -> Result<Json<MutationResponse>, ApiError> {
    let mut guard = state.space.write().await;
    let version = guard.version();
    if let Some(missing) = exists(&guard) {
        return Err(ApiError {
            status: StatusCode::NOT_FOUND,
            message: missing,
            version,
        });
    }
    if let Some(v) = expected.filter(|v| *v != version) {
        return Err(ApiError {
            status: StatusCode::CONFLICT,
            message: format!("stale version {v}; label space is at {version}"),
            version,
        });
    }
    let mut next = guard.clone();
    change(&mut next).map_err(|e| api_error(e, version))?;
    next.save(&state.path).map_err(|e| api_error(e, version))?;
    let version = next.version();
    *guard = next;
    log::info!("label space now at version {version}");
    Ok(Json(MutationResponse { version }))
}

async fn health(State(state): State<Arc<ReviewState>>) -> Json<serde_json::Value> {
    let version = state.space.read().await.version();
    Json(json!({ "status": "ok", "version": version }))
}

async fn pairs(State(state): State<Arc<ReviewState>>) -> Json<PairsResponse> {
    let space = state.space.read().await;
    Json(PairsResponse {
        version: space.version(),
        pairs: review_queue(
            &space,
            &state.chunks,
            &state.predictions,
            EVIDENCE_PER_LABEL,
        ),
    })
}

async fn labels(State(state): State<Arc<ReviewState>>) -> Json<LabelsResponse> {
    let space = state.space.read().await;
    Json(LabelsResponse {
        version: space.version(),
        labels: space.labels().to_vec(),
        active: space.live().map(|l| l.name.clone()).collect(),
    })
}

async fn resolve(
    State(state): State<Arc<ReviewState>>,
    UrlPath(id): UrlPath<PairId>,
    Json(body): Json<ResolutionBody>,
) -> Result<Json<MutationResponse>, ApiError> {
    mutate(
        &state,
        body.expected_version,
        |s| {
            s.pair(id)
                .is_none()
                .then(|| format!("no pair with id {id}"))
        },
        |s| s.apply_resolution(id, body.resolution),
    )
    .await
}

async fn rename(
    State(state): State<Arc<ReviewState>>,
    UrlPath(id): UrlPath<LabelId>,
    Json(body): Json<RenameBody>,
) -> Result<Json<MutationResponse>, ApiError> {
    mutate(
        &state,
        body.expected_version,
        |s| {
            s.get(id)
                .is_none()
                .then(|| format!("no label with id {id}"))
        },
        |s| {
            s.rename(id, &body.name)?;
            Ok(s.version())
        },
    )
    .await
}

async fn require_token(
    State(state): State<Arc<ReviewState>>,
    req: Request,
    next: Next,
) -> Response {
    if let Some(token) = &state.token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == token);
        if !ok {
            return (
                StatusCode::UNAUTHORIZED,
                Json(json!({ "error": "missing or wrong bearer token" })),
            )
                .into_response();
        }
    }
    next.run(req).await
}

pub fn router(state: Arc<ReviewState>, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/pairs", get(pairs))
        .route("/api/pairs/{id}/resolution", post(resolve))
        .route("/api/labels", get(labels))
        .route("/api/labels/{id}/rename", post(rename))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token))
        .route("/api/health", get(health))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route(
            "/",
            get(|| async { "labelwright review service; see /api/pairs and /api/labels\n" }),
        ),
    }
}

pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<ReviewState>,
    static_dir: Option<PathBuf>,
) -> std::io::Result<()> {
    axum::serve(listener, router(state, static_dir.as_deref())).await
}
