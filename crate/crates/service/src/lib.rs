//! HTTP JSON service for running a live audit.
//!
//! Each session lives in its own directory holding `config.json` and an
//! append-only `trail.ndjson`. Every state change is written (and synced) to
//! the trail before the request that caused it returns, so a restarted
//! service resumes each session exactly where it stopped.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

pub mod session;

pub use session::{
    demo_config, replay, CvrLine, DrawLine, MarginInput, NextCards, ReplayReport, Session, SessionConfig,
    SessionError, SessionStatus, StatusView, TrailLine,
};

pub const OPENAPI: &str = include_str!("openapi.json");

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";
pub const DEFAULT_DATA_DIR: &str = "rla-data";

type Shared = Arc<Mutex<Session>>;

/// Sessions known to the service, all backed by `data_dir`.
pub struct AppState {
    data_dir: PathBuf,
    sessions: RwLock<HashMap<String, Shared>>,
}

impl AppState {
    /// Loads every session stored under `data_dir`.
    pub fn load(data_dir: impl Into<PathBuf>) -> Result<Arc<Self>, SessionError> {
        let data_dir = data_dir.into();
        std::fs::create_dir_all(&data_dir)?;
        let mut sessions = HashMap::new();
        for dir in session::session_dirs(&data_dir)? {
            let s = Session::open(&dir)?;
            sessions.insert(s.id().to_string(), Arc::new(Mutex::new(s)));
        }
        Ok(Arc::new(AppState {
            data_dir,
            sessions: RwLock::new(sessions),
        }))
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    pub fn create(&self, config: SessionConfig) -> Result<String, SessionError> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let s = Session::create(&self.data_dir, id.clone(), config)?;
        self.sessions.write().unwrap().insert(id.clone(), Arc::new(Mutex::new(s)));
        Ok(id)
    }

    fn get(&self, id: &str) -> Result<Shared, SessionError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::NotFound(id.to_string()))
    }

    /// Runs `f` with the session locked; writes to one session are serialized.
    pub fn with<T>(&self, id: &str, f: impl FnOnce(&mut Session) -> Result<T, SessionError>) -> Result<T, SessionError> {
        let s = self.get(id)?;
        let mut guard = s.lock().unwrap_or_else(|e| e.into_inner());
        f(&mut guard)
    }

    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().unwrap().keys().cloned().collect();
        ids.sort();
        ids
    }
}

struct ApiError(StatusCode, String);

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let code = match &e {
            SessionError::NotFound(_) => StatusCode::NOT_FOUND,
            SessionError::Conflict(_) => StatusCode::CONFLICT,
            SessionError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            SessionError::Replay { .. } | SessionError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(code, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

type Body<T> = Result<Json<T>, JsonRejection>;

async fn create(State(app): State<Arc<AppState>>, body: Body<SessionConfig>) -> ApiResult<impl IntoResponse> {
    let Json(config) = body?;
    let id = app.create(config)?;
    let status = app.with(&id, |s| Ok(s.status()))?;
    Ok((StatusCode::CREATED, Json(json!({ "id": id, "status": status }))))
}

async fn list(State(app): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({ "ids": app.ids() }))
}

#[derive(Deserialize)]
struct NextQuery {
    k: Option<usize>,
}

async fn next(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<NextQuery>,
) -> ApiResult<Json<NextCards>> {
    Ok(Json(app.with(&id, |s| s.next(q.k.unwrap_or(1)))?))
}

#[derive(Deserialize)]
struct Mvr {
    card_id: String,
    #[serde(default)]
    vote: Value,
}

async fn mvr(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Body<Mvr>,
) -> ApiResult<Json<StatusView>> {
    let Json(m) = body?;
    Ok(Json(app.with(&id, |s| {
        s.submit(&m.card_id, &m.vote)?;
        Ok(s.status())
    })?))
}

async fn status(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<StatusView>> {
    Ok(Json(app.with(&id, |s| Ok(s.status()))?))
}

async fn close(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<StatusView>> {
    Ok(Json(app.with(&id, |s| s.close())?))
}

async fn spec() -> impl IntoResponse {
    ([(axum::http::header::CONTENT_TYPE, "application/json")], OPENAPI)
}

/// CORS for the audit-board UI: the origin in `RLA_UI_ORIGIN`, or any.
pub fn cors() -> CorsLayer {
    let origin = match std::env::var("RLA_UI_ORIGIN").ok().and_then(|o| HeaderValue::from_str(&o).ok()) {
        Some(o) => AllowOrigin::exact(o),
        None => AllowOrigin::any(),
    };
    CorsLayer::new().allow_origin(origin).allow_methods(Any).allow_headers(Any)
}

pub fn router(app: Arc<AppState>) -> Router {
    Router::new()
        .route("/audits", post(create).get(list))
        .route("/audits/{id}/next", get(next))
        .route("/audits/{id}/mvr", post(mvr))
        .route("/audits/{id}/status", get(status))
        .route("/audits/{id}/close", post(close))
        .route("/spec", get(spec))
        .layer(cors())
        .with_state(app)
}

/// Serves until interrupted.
pub async fn serve(app: Arc<AppState>, bind: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    tracing::info!(addr = %listener.local_addr()?, data_dir = %app.data_dir().display(), "listening");
    axum::serve(listener, router(app))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// Bind address from `RLA_BIND`, else the default.
pub fn bind_from_env() -> Result<SocketAddr, std::net::AddrParseError> {
    std::env::var("RLA_BIND").unwrap_or_else(|_| DEFAULT_BIND.to_string()).parse()
}

/// Data directory from `RLA_DATA_DIR`, else the default.
pub fn data_dir_from_env() -> PathBuf {
    std::env::var_os("RLA_DATA_DIR").map_or_else(|| PathBuf::from(DEFAULT_DATA_DIR), PathBuf::from)
}
