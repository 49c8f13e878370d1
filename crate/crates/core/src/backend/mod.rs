//! Chat-completion access.
//!
//! [`ChatBackend`] is the one contract the engine talks to. Implementations
//! must be stateless across calls: each request is a fresh conversation.

mod http;
mod scripted;
mod stub;

use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{PromptKind, TokenUsage};
use crate::prompts::PromptText;

pub use http::{HttpBackend, HttpConfig, RetryPolicy, DEFAULT_BASE_URL};
pub use scripted::{BackendScript, ScriptedBackend, ScriptedReply};
pub use stub::{stub_serve, StubFixture, StubServer};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("server error (HTTP {status}) after {attempts} attempt(s): {body}")]
    Server {
        status: u16,
        attempts: u32,
        body: String,
    },
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimited { attempts: u32 },
    #[error("authentication rejected (HTTP {status})")]
    Auth { status: u16 },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("script exhausted for `{0}` prompts")]
    ScriptExhausted(PromptKind),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

/// One outbound chat-completion request. `kind` is local metadata and is
/// not part of the wire body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    #[serde(skip)]
    pub kind: Option<PromptKind>,
}

impl ChatRequest {
    /// A fresh single-message conversation carrying `prompt`.
    pub fn single_user(model: impl Into<String>, prompt: PromptText, temperature: f64) -> Self {
        Self {
            model: model.into(),
            messages: vec![ChatMessage {
                role: Role::User,
                content: prompt.text,
            }],
            temperature,
            kind: Some(prompt.kind),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.messages.is_empty() {
            return Err(BackendError::InvalidRequest("no messages".into()));
        }
        if self.messages.iter().any(|m| m.content.is_empty()) {
            return Err(BackendError::InvalidRequest("empty message content".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(BackendError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }

    /// The wire body, as sent by the HTTP backend.
    pub fn to_wire(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("chat request serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    /// Assistant text exactly as received.
    pub content: String,
    pub usage: TokenUsage,
    pub model: String,
    pub latency: Duration,
    /// HTTP attempts used, including retries. Always 1 for offline backends.
    pub attempts: u32,
}

#[async_trait]
pub trait ChatBackend: Send + Sync {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

#[async_trait]
impl<B: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<B> {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).complete(request).await
    }
}

#[async_trait]
impl<B: ChatBackend + ?Sized> ChatBackend for &B {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).complete(request).await
    }
}
