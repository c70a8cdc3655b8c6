//! Chat backends: a generic chat-completions HTTP client with per-provider
//! request adapters, and a replay backend serving recorded responses.

use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::parse::ChatResponse;
use super::prompt::ChatMessage;
use crate::graph::normalize_id;
use crate::http::{redact_url, HttpClient};

/// Which of the two prompt chains a request belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Chain {
    Main,
    Benefit,
}

#[derive(Debug, Clone)]
pub struct ChatRequest<'a> {
    pub chain: Chain,
    /// The story being extracted; replay backends key on it.
    pub story: &'a str,
    pub messages: Vec<ChatMessage>,
    /// Function schema to force structured output, when supported.
    pub function: Option<&'a Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("transport failure talking to {endpoint}: {message}")]
    Transport { endpoint: String, message: String },
    #[error("{endpoint} answered HTTP {status}: {body}")]
    Status {
        endpoint: String,
        status: u16,
        body: String,
    },
    #[error("unexpected response shape from {endpoint}: {message}")]
    Protocol { endpoint: String, message: String },
    #[error("no recorded response for story `{0}`")]
    MissingFixture(String),
}

impl BackendError {
    /// Transport failures, rate limits and server errors are worth retrying.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport { .. } => true,
            BackendError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<ChatResponse, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(20),
        }
    }
}

impl RetryPolicy {
    pub fn delay_for(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }

    /// Run `op`, retrying retryable failures with exponential backoff.
    pub fn run<T>(
        &self,
        mut op: impl FnMut() -> Result<T, BackendError>,
    ) -> Result<T, BackendError> {
        let mut attempt = 0;
        loop {
            match op() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && attempt < self.max_retries => {
                    let delay = self.delay_for(attempt);
                    log::warn!("{e}; retrying in {delay:?} ({}/{})", attempt + 1, self.max_retries);
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Request/response dialect of a chat provider.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provider {
    /// `/v1/chat/completions` with `tools` for function calling.
    #[default]
    Openai,
    /// Ollama's `/api/chat`.
    Ollama,
}

impl std::str::FromStr for Provider {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "openai" => Ok(Provider::Openai),
            "ollama" => Ok(Provider::Ollama),
            other => Err(format!("unknown provider `{other}` (expected openai or ollama)")),
        }
    }
}

fn wire_messages(messages: &[ChatMessage]) -> Value {
    Value::Array(
        messages
            .iter()
            .map(|m| json!({"role": m.role.wire_name(), "content": m.content}))
            .collect(),
    )
}

impl Provider {
    pub fn request_body(
        self,
        model: &str,
        temperature: f64,
        request: &ChatRequest<'_>,
    ) -> Value {
        match self {
            Provider::Openai => {
                let mut body = json!({
                    "model": model,
                    "temperature": temperature,
                    "messages": wire_messages(&request.messages),
                });
                if let Some(function) = request.function {
                    let name = function["name"].clone();
                    body["tools"] = json!([{"type": "function", "function": function}]);
                    body["tool_choice"] = json!({"type": "function", "function": {"name": name}});
                }
                body
            }
            Provider::Ollama => json!({
                "model": model,
                "messages": wire_messages(&request.messages),
                "stream": false,
                "options": {"temperature": temperature},
            }),
        }
    }

    pub fn read_response(self, body: &Value) -> Result<ChatResponse, String> {
        match self {
            Provider::Openai => {
                let message = body
                    .pointer("/choices/0/message")
                    .ok_or("missing choices[0].message")?;
                let content = message
                    .get("content")
                    .and_then(Value::as_str)
                    .unwrap_or_default()
                    .to_string();
                let tool_arguments = match message.pointer("/tool_calls/0/function/arguments") {
                    Some(Value::String(s)) => Some(
                        serde_json::from_str(s)
                            .map_err(|e| format!("tool call arguments are not JSON: {e}"))?,
                    ),
                    Some(v @ Value::Object(_)) => Some(v.clone()),
                    _ => None,
                };
                Ok(ChatResponse {
                    content,
                    tool_arguments,
                })
            }
            Provider::Ollama => body
                .pointer("/message/content")
                .and_then(Value::as_str)
                .map(ChatResponse::text)
                .ok_or_else(|| "missing message.content".to_string()),
        }
    }
}

/// Chat-completions client. Speaks one provider dialect per instance.
#[derive(Debug, Clone)]
pub struct HttpChatBackend {
    pub endpoint: String,
    pub provider: Provider,
    pub model: String,
    pub temperature: f64,
    auth_token: Option<String>,
    client: HttpClient,
}

impl HttpChatBackend {
    pub fn new(
        endpoint: impl Into<String>,
        provider: Provider,
        model: impl Into<String>,
        temperature: f64,
        auth_token: Option<String>,
        timeout: Duration,
    ) -> Self {
        Self {
            endpoint: endpoint.into(),
            provider,
            model: model.into(),
            temperature,
            auth_token,
            client: HttpClient::new(timeout),
        }
    }
}

impl ChatBackend for HttpChatBackend {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<ChatResponse, BackendError> {
        let endpoint = redact_url(&self.endpoint);
        let body = self
            .provider
            .request_body(&self.model, self.temperature, request);
        let headers: Vec<(&str, String)> = self
            .auth_token
            .iter()
            .map(|t| ("Authorization", format!("Bearer {t}")))
            .collect();
        let reply = self
            .client
            .post_json(&self.endpoint, &headers, &body)
            .map_err(|e| BackendError::Transport {
                endpoint: endpoint.clone(),
                message: e.message,
            })?;
        if !reply.is_success() {
            return Err(BackendError::Status {
                endpoint,
                status: reply.status,
                body: reply.body.chars().take(500).collect(),
            });
        }
        let json = reply.json().ok_or_else(|| BackendError::Protocol {
            endpoint: endpoint.clone(),
            message: "body is not JSON".into(),
        })?;
        self.provider
            .read_response(&json)
            .map_err(|message| BackendError::Protocol { endpoint, message })
    }
}

/// One recorded story: the raw main-chain and benefit-chain outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordedExchange {
    pub main_response: String,
    pub benefit_response: String,
}

/// Replays recorded responses keyed by story text.
#[derive(Debug, Clone, Default)]
pub struct ReplayBackend {
    exact: HashMap<String, RecordedExchange>,
    normalized: HashMap<String, RecordedExchange>,
}

impl ReplayBackend {
    pub fn new(recordings: HashMap<String, RecordedExchange>) -> Self {
        let normalized = recordings
            .iter()
            .map(|(k, v)| (normalize_id(k), v.clone()))
            .collect();
        Self {
            exact: recordings,
            normalized,
        }
    }

    pub fn from_json(raw: &[u8]) -> Result<Self, serde_json::Error> {
        Ok(Self::new(serde_json::from_slice(raw)?))
    }

    pub fn from_file(path: &Path) -> Result<Self, String> {
        let raw = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_json(&raw).map_err(|e| format!("{}: {e}", path.display()))
    }

    fn lookup(&self, story: &str) -> Option<&RecordedExchange> {
        self.exact
            .get(story)
            .or_else(|| self.normalized.get(&normalize_id(story)))
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<ChatResponse, BackendError> {
        let rec = self
            .lookup(request.story)
            .ok_or_else(|| BackendError::MissingFixture(request.story.to_string()))?;
        Ok(ChatResponse::text(match request.chain {
            Chain::Main => &rec.main_response,
            Chain::Benefit => &rec.benefit_response,
        }))
    }
}
