use std::thread;
use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatBackend, ChatRequest, ChatResponse, GatewayError, TokenUsage};

pub const ENV_BASE_URL: &str = "VERIMAP_BASE_URL";
pub const ENV_API_KEY: &str = "VERIMAP_API_KEY";

const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

/// Bounded exponential backoff for transient failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    fn backoff(&self, attempt: u32) -> Duration {
        self.initial_backoff * 2u32.saturating_pow(attempt.saturating_sub(1))
    }
}

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: DEFAULT_BASE_URL.to_string(),
            api_key: None,
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
        }
    }
}

impl HttpConfig {
    /// Defaults overridden by `VERIMAP_BASE_URL` / `VERIMAP_API_KEY`.
    pub fn from_env() -> Self {
        let mut cfg = Self::default();
        if let Ok(url) = std::env::var(ENV_BASE_URL) {
            if !url.trim().is_empty() {
                cfg.base_url = url;
            }
        }
        cfg.api_key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        cfg
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

/// OpenAI-compatible `/chat/completions` client.
pub struct HttpBackend {
    config: HttpConfig,
    client: reqwest::blocking::Client,
}

enum Failure {
    Retryable(String),
    Fatal(GatewayError),
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| GatewayError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(Self { config, client })
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    fn body(request: &ChatRequest) -> Value {
        json!({
            "model": request.model_id,
            "messages": request.messages,
            "temperature": request.temperature,
            "top_p": request.top_p,
        })
    }

    fn attempt(&self, body: &Value) -> Result<ChatResponse, Failure> {
        let mut call = self.client.post(self.config.endpoint()).json(body);
        if let Some(key) = &self.config.api_key {
            call = call.bearer_auth(key);
        }
        let response = call.send().map_err(|e| Failure::Retryable(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .text()
            .map_err(|e| Failure::Retryable(e.to_string()))?;
        match status {
            200..=299 => parse_completion(&text).map_err(Failure::Fatal),
            401 | 403 => Err(Failure::Fatal(GatewayError::Auth(format!("HTTP {status}: {text}")))),
            429 | 500..=599 => Err(Failure::Retryable(format!("HTTP {status}: {text}"))),
            _ => Err(Failure::Fatal(GatewayError::Status { status, body: text })),
        }
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let body = Self::body(request);
        let attempts = self.config.retry.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.attempt(&body) {
                Ok(resp) => return Ok(resp),
                Err(Failure::Fatal(err)) => return Err(err),
                Err(Failure::Retryable(msg)) => {
                    log::warn!("model call attempt {attempt}/{attempts} failed: {msg}");
                    last = msg;
                    if attempt < attempts {
                        thread::sleep(self.config.retry.backoff(attempt));
                    }
                }
            }
        }
        Err(GatewayError::Transport {
            attempts,
            message: last,
        })
    }
}

fn parse_completion(text: &str) -> Result<ChatResponse, GatewayError> {
    let v: Value =
        serde_json::from_str(text).map_err(|e| GatewayError::MalformedResponse(e.to_string()))?;
    let content = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| GatewayError::MalformedResponse("missing choices[0].message.content".into()))?
        .to_string();
    let count = |ptr: &str| v.pointer(ptr).and_then(Value::as_u64).unwrap_or(0);
    let usage = TokenUsage::new(
        count("/usage/prompt_tokens"),
        count("/usage/prompt_tokens_details/cached_tokens"),
        count("/usage/completion_tokens"),
    );
    Ok(ChatResponse { content, usage })
}
