use std::time::{Duration, Instant};

use async_trait::async_trait;
use rand::Rng;
use serde::Deserialize;

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse};
use crate::domain::TokenUsage;

pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

/// Exponential backoff with full jitter: before retry `n` (0-based) the
/// client sleeps a uniform random duration in `[0, base * factor^n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay: Duration::from_secs(1),
            factor: 2.0,
        }
    }
}

impl RetryPolicy {
    /// Upper bound of the jittered delay before retry `retry`.
    pub fn ceiling(&self, retry: u32) -> Duration {
        self.base_delay.mul_f64(self.factor.powi(retry as i32))
    }

    pub fn delay<R: Rng + ?Sized>(&self, retry: u32, rng: &mut R) -> Duration {
        self.ceiling(retry).mul_f64(rng.gen_range(0.0..=1.0))
    }
}

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub base_url: String,
    pub api_key: String,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: api_key.into(),
            timeout: Duration::from_secs(60),
            retry: RetryPolicy::default(),
        }
    }

    /// Reads `REFINE_API_KEY` (falling back to `OPENAI_API_KEY`) and
    /// `REFINE_BASE_URL`. Returns `None` when no key is set.
    pub fn from_env() -> Option<Self> {
        let key = std::env::var("REFINE_API_KEY")
            .ok()
            .filter(|k| !k.is_empty())
            .or_else(|| {
                std::env::var("OPENAI_API_KEY")
                    .ok()
                    .filter(|k| !k.is_empty())
            })?;
        let base = std::env::var("REFINE_BASE_URL")
            .ok()
            .filter(|b| !b.is_empty())
            .unwrap_or_else(|| DEFAULT_BASE_URL.to_string());
        Some(Self::new(base, key))
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
    #[serde(default)]
    model: Option<String>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: String,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
    total_tokens: Option<u64>,
}

/// Parses a chat-completion response body into content and usage.
pub(crate) fn parse_body(body: &str) -> Result<(String, TokenUsage, Option<String>), BackendError> {
    let wire: WireResponse =
        serde_json::from_str(body).map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
    let choice = wire
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| BackendError::MalformedResponse("empty choices array".into()))?;
    let usage = match wire.usage {
        Some(u) => TokenUsage::from_reported(u.prompt_tokens, u.completion_tokens, u.total_tokens)
            .map_err(|e| BackendError::MalformedResponse(e.to_string()))?,
        None => TokenUsage::unknown(),
    };
    Ok((choice.message.content, usage, wire.model))
}

/// Client for OpenAI-compatible `/chat/completions` servers.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    client: reqwest::Client,
    config: HttpConfig,
}

enum Attempt {
    Done(ChatResponse),
    Retry(BackendError),
    Fail(BackendError),
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        let client = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self { client, config })
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    async fn attempt(&self, request: &ChatRequest, attempt: u32, started: Instant) -> Attempt {
        let sent = self
            .client
            .post(self.config.endpoint())
            .bearer_auth(&self.config.api_key)
            .json(&request.to_wire())
            .send()
            .await;
        let resp = match sent {
            Ok(r) => r,
            Err(e) => return Attempt::Fail(BackendError::Transport(e.to_string())),
        };
        let status = resp.status().as_u16();
        let body = match resp.text().await {
            Ok(b) => b,
            Err(e) => return Attempt::Fail(BackendError::Transport(e.to_string())),
        };
        match status {
            200..=299 => match parse_body(&body) {
                Ok((content, usage, model)) => Attempt::Done(ChatResponse {
                    content,
                    usage,
                    model: model.unwrap_or_else(|| request.model.clone()),
                    latency: started.elapsed(),
                    attempts: attempt,
                }),
                Err(e) => Attempt::Fail(e),
            },
            401 | 403 => Attempt::Fail(BackendError::Auth { status }),
            429 => Attempt::Retry(BackendError::RateLimited { attempts: attempt }),
            500..=599 => Attempt::Retry(BackendError::Server {
                status,
                attempts: attempt,
                body,
            }),
            _ => Attempt::Fail(BackendError::Server {
                status,
                attempts: attempt,
                body,
            }),
        }
    }

    /// Sends one request, retrying 429 and 5xx responses per the policy.
    pub async fn http_send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        let started = Instant::now();
        let policy = &self.config.retry;
        let max = policy.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            match self.attempt(request, attempt, started).await {
                Attempt::Done(resp) => return Ok(resp),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(e) if attempt >= max => return Err(e),
                Attempt::Retry(_) => {
                    let delay = policy.delay(attempt - 1, &mut rand::thread_rng());
                    tokio::time::sleep(delay).await;
                    attempt += 1;
                }
            }
        }
    }
}

#[async_trait]
impl ChatBackend for HttpBackend {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.http_send(request).await
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_canned_body() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"London"}}],"usage":{"prompt_tokens":12,"completion_tokens":3,"total_tokens":15}}"#;
        let (content, usage, model) = parse_body(body).unwrap();
        assert_eq!(content, "London");
        assert_eq!(usage, TokenUsage::new(12, 3));
        assert_eq!(model, None);
    }

    #[test]
    fn usage_is_optional_and_partial() {
        let body = r#"{"choices":[{"message":{"content":" x "}}]}"#;
        let (content, usage, _) = parse_body(body).unwrap();
        assert_eq!(content, " x ");
        assert_eq!(usage, TokenUsage::unknown());
        let body = r#"{"choices":[{"message":{"content":"x"}}],"usage":{"total_tokens":9}}"#;
        assert_eq!(parse_body(body).unwrap().1, TokenUsage::total_only(9));
    }

    #[test]
    fn malformed_bodies() {
        for body in [
            r#"{"usage":{}}"#,
            r#"{"choices":[]}"#,
            r#"{"choices":[{"message":{}}]}"#,
            "not json",
            r#"{"choices":[{"message":{"content":"x"}}],"usage":{"prompt_tokens":1,"completion_tokens":1,"total_tokens":5}}"#,
        ] {
            assert!(
                matches!(parse_body(body), Err(BackendError::MalformedResponse(_))),
                "{body}"
            );
        }
    }

    #[test]
    fn backoff_ceilings_double_and_jitter_stays_below() {
        let p = RetryPolicy::default();
        let ceilings: Vec<u64> = (0..4).map(|i| p.ceiling(i).as_millis() as u64).collect();
        assert_eq!(ceilings, [1000, 2000, 4000, 8000]);
        let mut rng = rand::thread_rng();
        for i in 0..4 {
            for _ in 0..50 {
                assert!(p.delay(i, &mut rng) <= p.ceiling(i));
            }
        }
    }

    #[test]
    fn endpoint_joins_cleanly() {
        assert_eq!(
            HttpConfig::new("http://h/v1/", "k").endpoint(),
            "http://h/v1/chat/completions"
        );
    }
}
