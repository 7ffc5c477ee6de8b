//! HTTP facade over [`Engine`].
//!
//! | method | path | body |
//! |---|---|---|
//! | GET  | `/datasets` | |
//! | POST | `/search` | `{dataset, query, weights?, top?}` |
//! | POST | `/rerank` | `{dataset, query, mode, k?, weights?, model?}` |
//! | GET  | `/guis/{dataset}/{gui_id}/image` | |
//! | GET  | `/guis/{dataset}/{gui_id}/annotations` | |
//!
//! Errors are `{"error": <code>, "detail": <message>}`.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::{Any, CorsLayer};

use crate::engine::{Engine, EngineError};
use crate::gateway::mime_for_path;
use crate::rerank::{RerankError, RerankMode, RerankRequest, DEFAULT_K};
use crate::retrieval::{RetrievalError, WeightProfile};

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub detail: String,
    pub extra: Option<serde_json::Value>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, detail: impl Into<String>) -> Self {
        Self {
            status,
            code,
            detail: detail.into(),
            extra: None,
        }
    }

    fn bad_request(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", detail)
    }

    fn not_found(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", detail)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({"error": self.code, "detail": self.detail});
        if let Some(extra) = self.extra {
            body["partial"] = extra;
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::bad_request(r.body_text())
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        use StatusCode as S;
        let detail = e.to_string();
        match e {
            EngineError::UnknownDataset(_) => ApiError::new(S::NOT_FOUND, "unknown_dataset", detail),
            EngineError::Gateway(_) => ApiError::new(S::BAD_GATEWAY, "model_gateway", detail),
            EngineError::Retrieval(r) => match r {
                RetrievalError::Gateway(_) => ApiError::new(S::BAD_GATEWAY, "model_gateway", detail),
                RetrievalError::NoActiveDimensions => {
                    ApiError::new(S::BAD_REQUEST, "no_active_dimension", detail)
                }
                RetrievalError::Index(_) => ApiError::new(S::INTERNAL_SERVER_ERROR, "index", detail),
                _ => ApiError::bad_request(detail),
            },
            EngineError::Rerank(r) => match r {
                RerankError::ProviderDown {
                    scored,
                    attempted,
                    usage,
                    ..
                } => ApiError {
                    extra: Some(json!({
                        "scored": scored,
                        "attempted": attempted,
                        "input_tokens": usage.input_tokens,
                        "output_tokens": usage.output_tokens,
                    })),
                    ..ApiError::new(S::BAD_GATEWAY, "provider_down", detail)
                },
                RerankError::Retrieval(RetrievalError::Gateway(_)) => {
                    ApiError::new(S::BAD_GATEWAY, "model_gateway", detail)
                }
                RerankError::MissingAnnotation { .. } | RerankError::MissingImage { .. } => {
                    ApiError::new(S::INTERNAL_SERVER_ERROR, "dataset_incomplete", detail)
                }
                RerankError::NoWeightedDimensions => {
                    ApiError::new(S::BAD_REQUEST, "no_active_dimension", detail)
                }
                _ => ApiError::bad_request(detail),
            },
            _ => ApiError::new(S::INTERNAL_SERVER_ERROR, "internal", detail),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchBody {
    pub dataset: String,
    pub query: String,
    #[serde(default)]
    pub weights: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    pub top: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RerankBody {
    pub dataset: String,
    pub query: String,
    pub mode: String,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub weights: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    pub model: Option<String>,
}

#[derive(Debug, Serialize)]
struct AnnotationsBody<'a> {
    gui_id: &'a str,
    annotations: &'a BTreeMap<String, String>,
}

fn weights_of(map: Option<BTreeMap<String, f64>>) -> Result<WeightProfile, ApiError> {
    let mut w = WeightProfile::new();
    for (k, v) in map.unwrap_or_default() {
        w.set(&k, v).map_err(|e| ApiError::bad_request(e.to_string()))?;
    }
    Ok(w)
}

fn check_query(q: &str) -> Result<(), ApiError> {
    if q.trim().is_empty() {
        Err(ApiError::new(StatusCode::BAD_REQUEST, "empty_query", "query must not be empty"))
    } else {
        Ok(())
    }
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
    })?
}

async fn list_datasets(State(engine): State<Arc<Engine>>) -> Response {
    Json(engine.summaries()).into_response()
}

async fn search_handler(
    State(engine): State<Arc<Engine>>,
    body: Result<Json<SearchBody>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(body) = body?;
    check_query(&body.query)?;
    engine.dataset(&body.dataset)?;
    if body.top == Some(0) {
        return Err(ApiError::bad_request("top must be at least 1"));
    }
    let weights = weights_of(body.weights)?;
    let out = blocking(move || {
        engine
            .search(&body.dataset, &body.query, &weights, body.top)
            .map_err(ApiError::from)
    })
    .await?;
    Ok(Json(out).into_response())
}

async fn rerank_handler(
    State(engine): State<Arc<Engine>>,
    body: Result<Json<RerankBody>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(body) = body?;
    check_query(&body.query)?;
    engine.dataset(&body.dataset)?;
    let mode: RerankMode = body
        .mode
        .parse()
        .map_err(|e: RerankError| ApiError::new(StatusCode::BAD_REQUEST, "invalid_mode", e.to_string()))?;
    let mut request = RerankRequest::new(&body.query, mode);
    request.k = body.k.unwrap_or(DEFAULT_K);
    request.weights = weights_of(body.weights)?;
    request.width = engine.config().concurrency;
    request
        .validate()
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let out = blocking(move || {
        engine
            .rerank(&body.dataset, &request, body.model.as_deref())
            .map_err(ApiError::from)
    })
    .await?;
    Ok(Json(out).into_response())
}

async fn gui_image(
    State(engine): State<Arc<Engine>>,
    Path((dataset, gui_id)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let d = engine.dataset(&dataset)?;
    let path = d
        .store
        .image_file(&gui_id)
        .ok_or_else(|| ApiError::not_found(format!("no GUI \"{gui_id}\" in dataset \"{dataset}\"")))?;
    let content_type = mime_for_path(&path);
    let bytes = blocking(move || {
        std::fs::read(&path).map_err(|e| {
            ApiError::not_found(format!("image of \"{gui_id}\" unreadable: {e}"))
        })
    })
    .await?;
    Ok((
        [(header::CONTENT_TYPE, HeaderValue::from_static(content_type))],
        bytes,
    )
        .into_response())
}

async fn gui_annotations(
    State(engine): State<Arc<Engine>>,
    Path((dataset, gui_id)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let d = engine.dataset(&dataset)?;
    let entry = d
        .store
        .get(&gui_id)
        .ok_or_else(|| ApiError::not_found(format!("no GUI \"{gui_id}\" in dataset \"{dataset}\"")))?;
    Ok(Json(AnnotationsBody {
        gui_id: &entry.gui_id,
        annotations: &entry.annotations,
    })
    .into_response())
}

async fn fallback() -> ApiError {
    ApiError::not_found("no such endpoint")
}

pub fn router(engine: Arc<Engine>) -> Router {
    let cors = engine.config().cors_origin.clone();
    let router = Router::new()
        .route("/datasets", get(list_datasets))
        .route("/search", post(search_handler))
        .route("/rerank", post(rerank_handler))
        .route("/guis/{dataset}/{gui_id}/image", get(gui_image))
        .route("/guis/{dataset}/{gui_id}/annotations", get(gui_annotations))
        .fallback(fallback)
        .with_state(engine);
    match cors.as_deref() {
        None => router,
        Some("*") => router.layer(CorsLayer::new().allow_origin(Any).allow_methods(Any).allow_headers(Any)),
        Some(origin) => match HeaderValue::from_str(origin) {
            Ok(o) => router.layer(CorsLayer::new().allow_origin(o).allow_methods(Any).allow_headers(Any)),
            Err(_) => {
                tracing::warn!(%origin, "invalid CORS origin ignored");
                router
            }
        },
    }
}

/// Binds and serves until Ctrl-C.
pub async fn serve(engine: Arc<Engine>, bind: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(engine))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
