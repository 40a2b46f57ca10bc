//! HTTP service for interactive labeling sessions.
//!
//! | method | path                     | body            | response          |
//! |--------|--------------------------|-----------------|-------------------|
//! | GET    | `/health`                |                 | `{"status":"ok"}` |
//! | POST   | `/sessions`              | [`CreateSession`] | [`StatePayload`] |
//! | GET    | `/sessions/{id}`         |                 | [`StatePayload`]  |
//! | POST   | `/sessions/{id}/labels`  | [`SubmitLabel`] | [`StatePayload`]  |
//! | POST   | `/sessions/{id}/undo`    |                 | [`StatePayload`]  |
//! | GET    | `/sessions/{id}/export`  |                 | history CSV       |
//!
//! Errors are `{"error": {"code": ..., "message": ...}}` with code one of
//! `not_found`, `conflict`, `bad_request`, `unauthorized`, `internal`.
//! When a token is configured every `/sessions` route requires
//! `Authorization: Bearer <token>`.

mod error;
mod payload;
mod store;

pub use error::ServiceError;
pub use payload::{CreateSession, HistoryRow, PendingQuery, SessionConfig, StatePayload, SubmitLabel, HISTORY_TAIL};
pub use store::SessionStore;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::{Path as UrlPath, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use coda_core::benchmark::Manifest;
use serde_json::json;

/// Environment variable holding the optional bearer token.
pub const TOKEN_ENV: &str = "CODA_TOKEN";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub token: Option<String>,
}

#[derive(Clone)]
struct AppState {
    store: Arc<SessionStore>,
    token: Option<Arc<str>>,
}

/// Restores the sessions under `config.data_dir` and builds the router.
pub fn app(config: &ServiceConfig) -> Result<Router, ServiceError> {
    let store = Arc::new(SessionStore::open(&config.data_dir)?);
    Ok(router(store, config.token.clone()))
}

pub fn router(store: Arc<SessionStore>, token: Option<String>) -> Router {
    let state = AppState {
        store,
        token: token.filter(|t| !t.is_empty()).map(Arc::from),
    };
    let sessions = Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_state))
        .route("/sessions/{id}/labels", post(submit_label))
        .route("/sessions/{id}/undo", post(undo))
        .route("/sessions/{id}/export", get(export))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    Router::new()
        .route("/health", get(health))
        .merge(sessions)
        .with_state(state)
}

/// Serves `app` until ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, app: Router) -> std::io::Result<()> {
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn require_token(State(state): State<AppState>, request: Request, next: Next) -> Response {
    if let Some(expected) = &state.token {
        let presented = request
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(expected.as_ref()) {
            return ServiceError::Unauthorized.into_response();
        }
    }
    next.run(request).await
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

/// Runs a blocking store operation off the async workers.
async fn blocking<T, F>(state: &AppState, f: F) -> Result<T, ServiceError>
where
    T: Send + 'static,
    F: FnOnce(&SessionStore) -> Result<T, ServiceError> + Send + 'static,
{
    let store = Arc::clone(&state.store);
    tokio::task::spawn_blocking(move || f(&store))
        .await
        .map_err(ServiceError::internal)?
}

async fn create_session(
    State(state): State<AppState>,
    body: Result<Json<CreateSession>, axum::extract::rejection::JsonRejection>,
) -> Result<(StatusCode, Json<StatePayload>), ServiceError> {
    let Json(body) = body.map_err(ServiceError::bad_request)?;
    let (manifest, base) = match (body.manifest_path, body.manifest) {
        (Some(path), None) => {
            let path = PathBuf::from(path);
            let manifest = Manifest::read(&path).map_err(ServiceError::bad_request)?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (manifest, base)
        }
        (None, Some(manifest)) => (manifest, PathBuf::from(".")),
        _ => {
            return Err(ServiceError::BadRequest(
                "provide exactly one of manifest_path and manifest".into(),
            ))
        }
    };
    let config = body.config;
    let payload = blocking(&state, move |store| store.create(manifest, &base, config)).await?;
    Ok((StatusCode::CREATED, Json((*payload).clone())))
}

async fn get_state(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<StatePayload>, ServiceError> {
    Ok(Json((*state.store.state(&id)?).clone()))
}

async fn submit_label(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<SubmitLabel>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<StatePayload>, ServiceError> {
    let Json(body) = body.map_err(ServiceError::bad_request)?;
    let payload = blocking(&state, move |store| {
        store.submit_label(&id, body.step, &body.item_id, body.class_index)
    })
    .await?;
    Ok(Json((*payload).clone()))
}

async fn undo(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<StatePayload>, ServiceError> {
    let payload = blocking(&state, move |store| store.undo(&id)).await?;
    Ok(Json((*payload).clone()))
}

async fn export(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, ServiceError> {
    let csv = blocking(&state, move |store| store.export_csv(&id)).await?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response())
}
