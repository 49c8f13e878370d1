use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse};
use crate::domain::{PromptKind, TokenUsage};
use crate::prompts::classify;

/// One canned reply. In script files a bare string is shorthand for a reply
/// with zero token counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "ReplyForm")]
pub struct ScriptedReply {
    pub content: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ReplyForm {
    Bare(String),
    Full {
        content: String,
        #[serde(default)]
        prompt_tokens: u64,
        #[serde(default)]
        completion_tokens: u64,
    },
}

impl From<ReplyForm> for ScriptedReply {
    fn from(form: ReplyForm) -> Self {
        match form {
            ReplyForm::Bare(content) => Self::new(content, 0, 0),
            ReplyForm::Full {
                content,
                prompt_tokens,
                completion_tokens,
            } => Self::new(content, prompt_tokens, completion_tokens),
        }
    }
}

impl ScriptedReply {
    pub fn new(content: impl Into<String>, prompt_tokens: u64, completion_tokens: u64) -> Self {
        Self {
            content: content.into(),
            prompt_tokens,
            completion_tokens,
        }
    }
}

/// Canned replies per prompt kind, consumed front to back.
///
/// On disk this is a JSON object keyed by kind name (`initial`, `defect`,
/// `optimize`, `blind_optimize`, `vote`).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BackendScript {
    pub queues: HashMap<PromptKind, Vec<ScriptedReply>>,
}

impl BackendScript {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends replies with zero token counts.
    pub fn with(mut self, kind: PromptKind, contents: &[&str]) -> Self {
        self.queues
            .entry(kind)
            .or_default()
            .extend(contents.iter().map(|c| ScriptedReply::new(*c, 0, 0)));
        self
    }

    pub fn push(&mut self, kind: PromptKind, reply: ScriptedReply) {
        self.queues.entry(kind).or_default().push(reply);
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }

    pub fn load(path: &Path) -> Result<Self, std::io::Error> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

/// Deterministic offline backend that plays back a [`BackendScript`].
///
/// Every request it receives is kept so tests can inspect what the engine
/// sent.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    model: String,
    queues: Mutex<HashMap<PromptKind, VecDeque<ScriptedReply>>>,
    requests: Mutex<Vec<ChatRequest>>,
}

impl ScriptedBackend {
    pub fn new(script: BackendScript) -> Self {
        Self {
            model: "scripted".into(),
            queues: Mutex::new(
                script
                    .queues
                    .into_iter()
                    .map(|(k, v)| (k, v.into_iter().collect()))
                    .collect(),
            ),
            requests: Mutex::new(Vec::new()),
        }
    }

    /// Pops the next reply for the request's kind.
    pub fn scripted_next(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let kind = request.kind.unwrap_or_else(|| {
            request
                .messages
                .last()
                .map(|m| classify(&m.content))
                .unwrap_or(PromptKind::InitialAnswer)
        });
        self.requests.lock().unwrap().push(request.clone());
        let reply = self
            .queues
            .lock()
            .unwrap()
            .get_mut(&kind)
            .and_then(VecDeque::pop_front)
            .ok_or(BackendError::ScriptExhausted(kind))?;
        Ok(ChatResponse {
            content: reply.content,
            usage: TokenUsage::new(reply.prompt_tokens, reply.completion_tokens),
            model: if request.model.is_empty() {
                self.model.clone()
            } else {
                request.model.clone()
            },
            latency: Duration::ZERO,
            attempts: 1,
        })
    }

    /// Requests received so far, in arrival order.
    pub fn requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().unwrap().clone()
    }

    pub fn remaining(&self, kind: PromptKind) -> usize {
        self.queues
            .lock()
            .unwrap()
            .get(&kind)
            .map_or(0, VecDeque::len)
    }
}

#[async_trait]
impl ChatBackend for ScriptedBackend {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        self.scripted_next(request)
    }
}
