//! Northbound HTTP API and the clients the monitor uses to reach it.
//!
//! `POST /reconfigure` runs one reconfiguration at a time. Requests wait in
//! arrival order behind the one in flight. When [`QUEUE_DEPTH`] are already
//! waiting, further requests get 409.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use thiserror::Error;
use tokio::sync::Semaphore;

use super::{Controller, ReconfigRequest, ReconfigResponse, Southbound};
use crate::clock::Clock;

/// Requests allowed to wait behind the one in flight.
pub const QUEUE_DEPTH: usize = 16;

struct AppState<S> {
    controller: Arc<tokio::sync::Mutex<Controller<S>>>,
    slots: Arc<Semaphore>,
}

impl<S> Clone for AppState<S> {
    fn clone(&self) -> Self {
        Self {
            controller: Arc::clone(&self.controller),
            slots: Arc::clone(&self.slots),
        }
    }
}

fn error_body(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": msg.into() }))).into_response()
}

async fn reconfigure<S: Southbound + Send + 'static>(
    State(state): State<AppState<S>>,
    body: Bytes,
) -> Response {
    let req: ReconfigRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error_body(StatusCode::BAD_REQUEST, format!("malformed request: {e}")),
    };
    let Ok(slot) = Arc::clone(&state.slots).try_acquire_owned() else {
        return error_body(StatusCode::CONFLICT, "reconfiguration queue is full");
    };
    // tokio's mutex is fair, so queued requests run in arrival order.
    let mut controller = Arc::clone(&state.controller).lock_owned().await;
    let result = tokio::task::spawn_blocking(move || {
        let result = controller.handle_reconfigure(&req);
        drop(controller);
        drop(slot);
        result
    })
    .await;
    match result {
        Ok(Ok(report)) => (StatusCode::OK, Json(report.to_response())).into_response(),
        Ok(Err(e)) => error_body(StatusCode::BAD_REQUEST, e.to_string()),
        Err(e) => error_body(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn paths<S: Southbound + Send + 'static>(State(state): State<AppState<S>>) -> Response {
    let controller = state.controller.lock().await;
    Json(controller.paths()).into_response()
}

/// Builds the northbound router around a controller.
pub fn router<S: Southbound + Send + 'static>(controller: Controller<S>) -> Router {
    let state = AppState {
        controller: Arc::new(tokio::sync::Mutex::new(controller)),
        slots: Arc::new(Semaphore::new(QUEUE_DEPTH + 1)),
    };
    Router::new()
        .route("/reconfigure", post(reconfigure::<S>))
        .route("/paths", get(paths::<S>))
        .with_state(state)
}

pub async fn serve(listener: tokio::net::TcpListener, router: Router) -> std::io::Result<()> {
    axum::serve(listener, router).await
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request rejected: {0}")]
    Rejected(String),
    #[error("controller busy")]
    Busy,
    #[error("controller unreachable: {0}")]
    Transport(String),
}

/// How the monitor submits reconfigurations.
pub trait ControllerClient {
    fn reconfigure(&mut self, req: &ReconfigRequest) -> Result<ReconfigResponse, ClientError>;
}

/// In-process client. Charges `latency_s` to the shared clock per request
/// to stand in for the HTTP round trip.
pub struct DirectClient<S> {
    controller: Arc<Mutex<Controller<S>>>,
    clock: Arc<dyn Clock>,
    latency_s: f64,
}

impl<S: Southbound> DirectClient<S> {
    pub fn new(controller: Arc<Mutex<Controller<S>>>, clock: Arc<dyn Clock>, latency_s: f64) -> Self {
        Self {
            controller,
            clock,
            latency_s,
        }
    }
}

impl<S: Southbound> ControllerClient for DirectClient<S> {
    fn reconfigure(&mut self, req: &ReconfigRequest) -> Result<ReconfigResponse, ClientError> {
        self.clock.advance(self.latency_s / 2.0);
        let result = self
            .controller
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .handle_reconfigure(req);
        self.clock.advance(self.latency_s / 2.0);
        result
            .map(|r| r.to_response())
            .map_err(|e| ClientError::Rejected(e.to_string()))
    }
}

/// Blocking HTTP client for the northbound API.
pub struct HttpControllerClient {
    base_url: String,
    agent: ureq::Agent,
}

impl HttpControllerClient {
    pub fn new(base_url: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_owned(),
            agent,
        }
    }
}

impl ControllerClient for HttpControllerClient {
    fn reconfigure(&mut self, req: &ReconfigRequest) -> Result<ReconfigResponse, ClientError> {
        let url = format!("{}/reconfigure", self.base_url);
        let mut resp = self
            .agent
            .post(&url)
            .send_json(req)
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        match status {
            200 => serde_json::from_str(&body).map_err(|e| ClientError::Transport(e.to_string())),
            400 => Err(ClientError::Rejected(body)),
            409 => Err(ClientError::Busy),
            other => Err(ClientError::Transport(format!("HTTP {other}: {body}"))),
        }
    }
}
