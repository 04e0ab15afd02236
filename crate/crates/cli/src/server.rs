//! HTTP transport over the inference service.

use std::sync::{Arc, RwLock};

use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use deal_core::model::Deal;
use deal_core::service::{handle_infer, ImageStore, InferRequest, ServiceError, MAX_INLINE_IMAGE_BYTES};
use serde_json::json;

/// Shared server state. Inference holds the read lock, so swapping the
/// checkpoint waits for in-flight requests to drain.
pub struct AppState {
    model: RwLock<Option<Deal<f64>>>,
    images: Option<ImageStore>,
}

impl AppState {
    pub fn new(model: Option<Deal<f64>>, images: Option<ImageStore>) -> Arc<Self> {
        Arc::new(Self {
            model: RwLock::new(model),
            images,
        })
    }

    pub fn replace_model(&self, model: Option<Deal<f64>>) {
        *self.model.write().unwrap_or_else(|e| e.into_inner()) = model;
    }

    fn checkpoint_loaded(&self) -> bool {
        self.model.read().map(|m| m.is_some()).unwrap_or(false)
    }
}

struct ApiError(ServiceError);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(json!({ "error": self.0.to_string() }))).into_response()
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        Self(e)
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    // base64 inflates the inline image by a third, plus JSON framing
    let body_limit = MAX_INLINE_IMAGE_BYTES / 3 * 4 + 1024 * 1024;
    Router::new()
        .route("/health", get(health))
        .route("/images", get(list_images))
        .route("/images/{id}", get(get_image))
        .route("/infer", post(infer))
        .layer(DefaultBodyLimit::max(body_limit))
        .with_state(state)
}

async fn health(State(state): State<Arc<AppState>>) -> impl IntoResponse {
    Json(json!({ "status": "ok", "checkpoint_loaded": state.checkpoint_loaded() }))
}

fn store(state: &AppState) -> Result<&ImageStore, ApiError> {
    state
        .images
        .as_ref()
        .ok_or_else(|| ApiError(ServiceError::NotFound("no image directory configured".into())))
}

async fn list_images(State(state): State<Arc<AppState>>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(store(&state)?.list()?))
}

async fn get_image(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let bytes = store(&state)?.bytes(&id)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes))
}

async fn infer(State(state): State<Arc<AppState>>, body: axum::body::Bytes) -> Result<impl IntoResponse, ApiError> {
    let request: InferRequest =
        serde_json::from_slice(&body).map_err(|e| ServiceError::BadRequest(format!("malformed request body: {e}")))?;
    let response = tokio::task::spawn_blocking(move || {
        let guard = state.model.read().unwrap_or_else(|e| e.into_inner());
        handle_infer(&request, guard.as_ref(), state.images.as_ref())
    })
    .await
    .map_err(|e| ServiceError::Internal(format!("inference task failed: {e}")))??;
    Ok(Json(response))
}
