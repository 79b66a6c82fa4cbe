//! Read-only HTTP facade over loaded page snapshots and trained grounders.
//!
//! Routes:
//! - `GET /pages` lists `{page_id, url, element_count}`
//! - `GET /pages/{id}` returns the full snapshot
//! - `POST /ground` ranks the visible elements of a page for a command
//! - `GET /healthz` reports status and the loaded model kinds
//! - `/ui/*` serves the playground's static files

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ground_core::grounder::Grounder;
use ground_core::models::{ModelError, ModelKind};
use ground_core::retrieval::{RetrievalConfig, RetrievalError};
use ground_core::snapshot::{BBox, PageSnapshot};
use ground_core::text::tokenize_natural;
use ground_core::training::{load_snapshot_dir, CorpusError};
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

pub const MAX_TOP_K: usize = 50;
pub const DEFAULT_TOP_K: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error(transparent)]
    Snapshots(#[from] CorpusError),
    #[error("{path}: {source}")]
    Open { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Checkpoint { path: PathBuf, source: ModelError },
    #[error("{path}: {source}")]
    Df { path: PathBuf, source: RetrievalError },
    #[error("{first} and {second} both hold a {kind} model")]
    DuplicateModel { kind: ModelKind, first: PathBuf, second: PathBuf },
    #[error("no model given: pass at least one checkpoint or DF table")]
    NoModels,
}

/// Files the service reads at startup.
#[derive(Debug, Clone, Default)]
pub struct Artifacts {
    pub snapshots: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub df: Option<PathBuf>,
    pub retrieval: RetrievalConfig,
}

/// Immutable state shared by all requests.
#[derive(Debug, Default)]
pub struct AppState {
    pages: BTreeMap<String, PageSnapshot>,
    models: BTreeMap<ModelKind, Grounder>,
}

fn open(path: &Path) -> Result<BufReader<File>, LoadError> {
    File::open(path).map(BufReader::new).map_err(|source| LoadError::Open {
        path: path.to_path_buf(),
        source,
    })
}

impl AppState {
    pub fn new(pages: Vec<PageSnapshot>, models: Vec<Grounder>) -> Self {
        Self {
            pages: pages.into_iter().map(|p| (p.page_id.clone(), p)).collect(),
            models: models.into_iter().map(|m| (m.kind(), m)).collect(),
        }
    }

    pub fn load(artifacts: &Artifacts) -> Result<Self, LoadError> {
        let pages = load_snapshot_dir(&artifacts.snapshots)?;
        let mut models: BTreeMap<ModelKind, (Grounder, PathBuf)> = BTreeMap::new();
        let mut insert = |g: Grounder, path: &Path| match models.get(&g.kind()) {
            Some((_, first)) => Err(LoadError::DuplicateModel {
                kind: g.kind(),
                first: first.clone(),
                second: path.to_path_buf(),
            }),
            None => {
                models.insert(g.kind(), (g, path.to_path_buf()));
                Ok(())
            }
        };
        if let Some(path) = &artifacts.df {
            let g = Grounder::read_retrieval(open(path)?, artifacts.retrieval).map_err(|source| LoadError::Df {
                path: path.clone(),
                source,
            })?;
            insert(g, path)?;
        }
        for path in &artifacts.checkpoints {
            let g = Grounder::read_checkpoint(open(path)?).map_err(|source| LoadError::Checkpoint {
                path: path.clone(),
                source,
            })?;
            insert(g, path)?;
        }
        if models.is_empty() {
            return Err(LoadError::NoModels);
        }
        Ok(Self::new(pages, models.into_values().map(|(g, _)| g).collect()))
    }

    pub fn page_count(&self) -> usize {
        self.pages.len()
    }

    pub fn model_kinds(&self) -> Vec<ModelKind> {
        self.models.keys().copied().collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PageSummary {
    pub page_id: String,
    pub url: String,
    pub element_count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GroundRequest {
    pub page_id: String,
    pub command: String,
    pub model: String,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
}

fn default_top_k() -> usize {
    DEFAULT_TOP_K
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct RankedOut {
    pub element_id: String,
    pub score: f64,
    pub probability: Option<f64>,
    pub bbox: BBox,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GroundResponse {
    pub ranked: Vec<RankedOut>,
    pub model: ModelKind,
    pub latency_ms: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub models_loaded: Vec<ModelKind>,
}

/// Error body: a stable machine-readable `code` plus a human message.
#[derive(Debug, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    #[serde(skip)]
    pub status: u16,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.into(),
            message: message.into(),
            status: status.as_u16(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type Shared = Arc<AppState>;

async fn list_pages(State(state): State<Shared>) -> Json<Vec<PageSummary>> {
    Json(
        state
            .pages
            .values()
            .map(|p| PageSummary {
                page_id: p.page_id.clone(),
                url: p.url.clone(),
                element_count: p.len(),
            })
            .collect(),
    )
}

fn page_not_found(id: &str) -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "page_not_found", format!("no page {id:?}"))
}

async fn get_page(State(state): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Json<PageSnapshot>, ApiError> {
    state.pages.get(&id).cloned().map(Json).ok_or_else(|| page_not_found(&id))
}

async fn health(State(state): State<Shared>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        models_loaded: state.model_kinds(),
    })
}

/// Checks a request and runs the model. Pure in (state, request) apart
/// from the latency measurement.
pub fn ground(state: &AppState, req: &GroundRequest) -> Result<GroundResponse, ApiError> {
    let unprocessable = |code: &str, msg: String| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, code, msg);
    if tokenize_natural(&req.command).is_empty() {
        return Err(unprocessable("empty_command", "command has no words".into()));
    }
    if !(1..=MAX_TOP_K).contains(&req.top_k) {
        return Err(unprocessable("invalid_top_k", format!("top_k must be in 1..={MAX_TOP_K}, got {}", req.top_k)));
    }
    let kind: ModelKind = req
        .model
        .parse()
        .map_err(|e: String| ApiError::new(StatusCode::NOT_FOUND, "model_not_found", e))?;
    let page = state.pages.get(&req.page_id).ok_or_else(|| page_not_found(&req.page_id))?;
    let grounder = state.models.get(&kind).ok_or_else(|| {
        ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "model_not_loaded", format!("no {kind} model is loaded"))
    })?;

    let start = Instant::now();
    let prediction = grounder.predict(page, &req.command).map_err(|e| {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "cannot_ground", e.to_string())
    })?;
    let ranked = prediction
        .ranked
        .iter()
        .take(req.top_k)
        .map(|r| RankedOut {
            element_id: r.element_id.clone(),
            score: r.score,
            probability: r.probability,
            bbox: page.elements[r.preorder].bbox,
        })
        .collect();
    Ok(GroundResponse {
        ranked,
        model: kind,
        latency_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

async fn ground_handler(
    State(state): State<Shared>,
    body: Result<Json<GroundRequest>, JsonRejection>,
) -> Result<Json<GroundResponse>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError::new(e.status(), "invalid_request", e.body_text()))?;
    // Neural scoring is CPU-bound; keep it off the async workers.
    tokio::task::spawn_blocking(move || ground(&state, &req))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map(Json)
}

/// All routes, with permissive CORS for the playground. Static files under
/// `/ui` come from `ui_dir` when given.
pub fn router(state: Arc<AppState>, ui_dir: Option<&Path>) -> Router {
    let mut app = Router::new()
        .route("/pages", get(list_pages))
        .route("/pages/:id", get(get_page))
        .route("/ground", post(ground_handler))
        .route("/healthz", get(health))
        .with_state(state);
    if let Some(dir) = ui_dir {
        app = app.nest_service("/ui", ServeDir::new(dir));
    }
    app.layer(CorsLayer::permissive())
}

/// Binds `addr` and serves until Ctrl-C.
pub async fn serve(addr: SocketAddr, state: AppState, ui_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(
        addr = %listener.local_addr()?,
        pages = state.page_count(),
        models = ?state.model_kinds(),
        "serving"
    );
    let app = router(Arc::new(state), ui_dir.as_deref());
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
