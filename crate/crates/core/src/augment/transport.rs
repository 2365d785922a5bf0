use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Failures talking to a chat-completions endpoint.
#[derive(Debug, Error)]
pub enum TransportError {
    #[error("no endpoint configured (set LLM_ENDPOINT)")]
    NoEndpoint,

    #[error("request timed out after {0} ms")]
    Timeout(u64),

    #[error("endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },

    #[error("transport failure: {0}")]
    Network(String),

    #[error("malformed response body: {0}")]
    Body(String),
}

impl TransportError {
    /// Worth retrying: timeouts, network faults, throttling and server errors.
    pub fn is_transient(&self) -> bool {
        match self {
            TransportError::Timeout(_) | TransportError::Network(_) => true,
            TransportError::Status { status, .. } => *status == 429 || *status >= 500,
            TransportError::NoEndpoint | TransportError::Body(_) => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: "system".into(), content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: "user".into(), content: content.into() }
    }
}

/// What a request asks for. Not part of the wire body; the mock backend uses
/// it to shape replies.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TaskHint {
    Item,
    User,
    Sequence { candidates_a: Vec<usize>, candidates_b: Vec<usize> },
}

/// Chat-completions request body.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    #[serde(skip)]
    pub task: Option<TaskHint>,
}

impl ChatRequest {
    /// Canonical wire bytes; the cache key and mock seed derive from these.
    pub fn wire_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("request serializes")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatReply {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
}

/// Something that answers chat requests.
pub trait ChatBackend: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<ChatReply, TransportError>;

    /// Identifies the backend in cache keys so mock and live replies never mix.
    fn identity(&self) -> String;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 3, base_delay_ms: 500 }
    }
}

impl RetryPolicy {
    /// Delay before retry `attempt` (0-based): base·2^attempt.
    pub fn delay(&self, attempt: u32) -> Duration {
        Duration::from_millis(self.base_delay_ms.saturating_mul(1 << attempt.min(16)))
    }

    /// Runs `call`, retrying transient failures with exponential backoff.
    pub fn run<T>(&self, mut call: impl FnMut() -> Result<T, TransportError>) -> Result<T, TransportError> {
        let mut attempt = 0;
        loop {
            match call() {
                Err(e) if e.is_transient() && attempt < self.max_retries => {
                    log::warn!("chat request failed ({e}); retry {} of {}", attempt + 1, self.max_retries);
                    std::thread::sleep(self.delay(attempt));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

#[derive(Deserialize)]
struct WireReply {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

/// Chat-completions over HTTP POST with bearer auth.
pub struct HttpBackend {
    endpoint: String,
    api_key: Option<String>,
    timeout: Duration,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { endpoint: endpoint.into(), api_key, timeout, agent }
    }

    /// Reads `LLM_ENDPOINT` and `LLM_API_KEY`.
    pub fn from_env(timeout: Duration) -> Result<Self, TransportError> {
        let endpoint = std::env::var("LLM_ENDPOINT").ok().filter(|s| !s.is_empty()).ok_or(TransportError::NoEndpoint)?;
        Ok(Self::new(endpoint, std::env::var("LLM_API_KEY").ok().filter(|s| !s.is_empty()), timeout))
    }
}

impl ChatBackend for HttpBackend {
    fn chat(&self, request: &ChatRequest) -> Result<ChatReply, TransportError> {
        let start = Instant::now();
        let mut req = self.agent.post(&self.endpoint).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send(&request.wire_bytes()[..]).map_err(|e| match e {
            ureq::Error::Timeout(_) => TransportError::Timeout(self.timeout.as_millis() as u64),
            other => TransportError::Network(other.to_string()),
        })?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(|e| TransportError::Body(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(TransportError::Status { status, body });
        }
        let wire: WireReply = serde_json::from_str(&body).map_err(|e| TransportError::Body(e.to_string()))?;
        let text = wire
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| TransportError::Body("no choices in reply".into()))?;
        let (prompt_tokens, completion_tokens) =
            wire.usage.map_or((0, 0), |u| (u.prompt_tokens, u.completion_tokens));
        Ok(ChatReply { text, prompt_tokens, completion_tokens, latency_ms: start.elapsed().as_millis() as u64 })
    }

    fn identity(&self) -> String {
        format!("http:{}", self.endpoint)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn backoff_doubles_and_stops_after_max_retries() {
        let p = RetryPolicy { max_retries: 3, base_delay_ms: 0 };
        assert_eq!(RetryPolicy::default().delay(2), Duration::from_millis(2000));
        let calls = Cell::new(0);
        let r: Result<(), _> = p.run(|| {
            calls.set(calls.get() + 1);
            Err(TransportError::Status { status: 503, body: String::new() })
        });
        assert!(r.is_err());
        assert_eq!(calls.get(), 4);

        calls.set(0);
        let r: Result<(), _> = p.run(|| {
            calls.set(calls.get() + 1);
            Err(TransportError::Status { status: 400, body: String::new() })
        });
        assert!(r.is_err());
        assert_eq!(calls.get(), 1, "client errors are not retried");
    }

    #[test]
    fn missing_endpoint_is_typed() {
        let backend = HttpBackend::new("http://127.0.0.1:9/v1/chat/completions", None, Duration::from_millis(200));
        let req = ChatRequest {
            model: "m".into(),
            messages: vec![ChatMessage::user("hi")],
            temperature: 0.4,
            top_p: 0.5,
            max_tokens: 8,
            task: None,
        };
        assert!(matches!(backend.chat(&req), Err(TransportError::Network(_) | TransportError::Timeout(_))));
        let body: serde_json::Value = serde_json::from_slice(&req.wire_bytes()).unwrap();
        assert_eq!(body["messages"][0]["role"], "user");
        assert!(body.get("task").is_none());
    }
}
