//! Local OpenAI-compatible stub server for wire-conformance tests.

use std::io;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::Router;
use serde::{Deserialize, Serialize};
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

/// One canned HTTP response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StubFixture {
    pub status: u16,
    pub body: String,
}

impl StubFixture {
    pub fn ok(body: impl Into<String>) -> Self {
        Self {
            status: 200,
            body: body.into(),
        }
    }

    pub fn status(status: u16, body: impl Into<String>) -> Self {
        Self {
            status,
            body: body.into(),
        }
    }

    /// A 200 response with the given assistant content and usage.
    pub fn completion(content: &str, prompt_tokens: u64, completion_tokens: u64) -> Self {
        Self::ok(
            serde_json::json!({
                "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}],
                "usage": {
                    "prompt_tokens": prompt_tokens,
                    "completion_tokens": completion_tokens,
                    "total_tokens": prompt_tokens + completion_tokens
                }
            })
            .to_string(),
        )
    }
}

#[derive(Default)]
struct Shared {
    fixtures: Vec<StubFixture>,
    served: usize,
    requests: Vec<String>,
}

type SharedState = Arc<Mutex<Shared>>;

async fn chat_completions(State(state): State<SharedState>, body: String) -> Response {
    let mut shared = state.lock().unwrap();
    shared.requests.push(body);
    let index = shared.served;
    shared.served += 1;
    match shared.fixtures.get(index).cloned() {
        Some(f) => {
            let status =
                StatusCode::from_u16(f.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
            (status, [(header::CONTENT_TYPE, "application/json")], f.body).into_response()
        }
        None => (
            StatusCode::INTERNAL_SERVER_ERROR,
            format!(
                "stub: request {} exceeds the {} configured fixture(s)",
                index + 1,
                shared.fixtures.len()
            ),
        )
            .into_response(),
    }
}

/// Handle to a running stub. The server stops when the handle is closed or
/// dropped.
pub struct StubServer {
    addr: SocketAddr,
    state: SharedState,
    shutdown: Option<oneshot::Sender<()>>,
    task: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Base URL to hand to an HTTP backend (`/chat/completions` is appended
    /// by the client).
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Raw bodies of every request received so far.
    pub fn requests(&self) -> Vec<String> {
        self.state.lock().unwrap().requests.clone()
    }

    pub fn request_count(&self) -> usize {
        self.state.lock().unwrap().requests.len()
    }

    pub async fn close(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(task) = self.task.take() {
            let _ = task.await;
        }
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

/// Starts a stub on an ephemeral localhost port serving `fixtures` in order
/// to successive `POST /chat/completions` requests. Must be called inside a
/// tokio runtime.
pub async fn stub_serve(fixtures: Vec<StubFixture>) -> io::Result<StubServer> {
    if fixtures.is_empty() {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            "stub needs at least one fixture",
        ));
    }
    let state: SharedState = Arc::new(Mutex::new(Shared {
        fixtures,
        ..Shared::default()
    }));
    let app = Router::new()
        .route("/chat/completions", post(chat_completions))
        .route("/v1/chat/completions", post(chat_completions))
        .with_state(state.clone());
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", 0)).await?;
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        let _ = axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await;
    });
    Ok(StubServer {
        addr,
        state,
        shutdown: Some(tx),
        task: Some(task),
    })
}
