//! Chat-completion gateway over pluggable backends.
//!
//! Every planner, executor and verifier call goes through a [`Gateway`],
//! which forwards to a shared [`ChatBackend`] and keeps a per-run ledger of
//! token usage tagged by [`Component`] for cost reporting.

mod http;
mod pricing;
mod scripted;

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpBackend, HttpConfig, RetryPolicy, ENV_API_KEY, ENV_BASE_URL};
pub use pricing::{cost_of, CostError, ModelPrice, PriceTable};
pub use scripted::ScriptedBackend;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed completion response: {0}")]
    MalformedResponse(String),
    #[error("scripted backend has no response left for {0} call")]
    ScriptExhausted(Component),
    #[error("operation requires a scripted backend")]
    WrongBackendKind,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

/// Engine component that issued a model call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Planner,
    Executor,
    Verifier,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::Planner, Component::Executor, Component::Verifier];

    pub fn as_str(self) -> &'static str {
        match self {
            Component::Planner => "planner",
            Component::Executor => "executor",
            Component::Verifier => "verifier",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// Sampling defaults used for every role.
pub const DEFAULT_TEMPERATURE: f64 = 1.0;
pub const DEFAULT_TOP_P: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model_id: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub top_p: f64,
    /// Which engine component issued the call. Not sent over the wire.
    pub component: Component,
}

impl ChatRequest {
    pub fn new(component: Component, model_id: impl Into<String>, messages: Vec<Message>) -> Self {
        Self {
            model_id: model_id.into(),
            messages,
            temperature: DEFAULT_TEMPERATURE,
            top_p: DEFAULT_TOP_P,
            component,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("no messages".into()));
        }
        for (name, v) in [("temperature", self.temperature), ("top_p", self.top_p)] {
            if !(0.0..=2.0).contains(&v) {
                return Err(GatewayError::InvalidRequest(format!(
                    "{name} {v} outside [0, 2]"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    /// Portion of `input_tokens` served from the provider's prompt cache.
    pub cached_input_tokens: u64,
    pub output_tokens: u64,
}

impl TokenUsage {
    pub fn new(input_tokens: u64, cached_input_tokens: u64, output_tokens: u64) -> Self {
        Self {
            input_tokens,
            cached_input_tokens: cached_input_tokens.min(input_tokens),
            output_tokens,
        }
    }

    pub fn is_zero(&self) -> bool {
        *self == Self::default()
    }
}

impl Add for TokenUsage {
    type Output = TokenUsage;

    fn add(self, rhs: TokenUsage) -> TokenUsage {
        TokenUsage {
            input_tokens: self.input_tokens + rhs.input_tokens,
            cached_input_tokens: self.cached_input_tokens + rhs.cached_input_tokens,
            output_tokens: self.output_tokens + rhs.output_tokens,
        }
    }
}

impl AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: TokenUsage) {
        *self = *self + rhs;
    }
}

impl Sum for TokenUsage {
    fn sum<I: Iterator<Item = TokenUsage>>(iter: I) -> Self {
        iter.fold(TokenUsage::default(), Add::add)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatResponse {
    pub content: String,
    pub usage: TokenUsage,
}

/// A chat-completion provider. Implementations must accept concurrent calls.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;

    fn as_scripted(&self) -> Option<&ScriptedBackend> {
        None
    }
}

/// Shared handle to a backend.
pub type Backend = Arc<dyn ChatBackend>;

/// Sends one request to `backend`.
pub fn complete(backend: &dyn ChatBackend, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
    request.validate()?;
    backend.complete(request)
}

/// Appends responses to a scripted backend's shared FIFO queue.
pub fn scripted_enqueue<S: Into<String>>(
    backend: &dyn ChatBackend,
    responses: impl IntoIterator<Item = S>,
) -> Result<(), GatewayError> {
    let scripted = backend.as_scripted().ok_or(GatewayError::WrongBackendKind)?;
    scripted.enqueue(responses);
    Ok(())
}

/// Usage of one completed model call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub component: Component,
    pub model_id: String,
    pub usage: TokenUsage,
}

/// Per-run front end to a shared backend that records every call's usage.
pub struct Gateway {
    backend: Backend,
    calls: Mutex<Vec<CallRecord>>,
}

impl Gateway {
    pub fn new(backend: Backend) -> Self {
        Self {
            backend,
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let response = complete(self.backend.as_ref(), request)?;
        self.calls.lock().expect("call ledger poisoned").push(CallRecord {
            component: request.component,
            model_id: request.model_id.clone(),
            usage: response.usage,
        });
        Ok(response)
    }

    pub fn calls(&self) -> Vec<CallRecord> {
        self.calls.lock().expect("call ledger poisoned").clone()
    }

    pub fn call_count(&self, component: Component) -> usize {
        self.calls
            .lock()
            .expect("call ledger poisoned")
            .iter()
            .filter(|c| c.component == component)
            .count()
    }
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("calls", &self.calls.lock().map(|c| c.len()).unwrap_or(0))
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_bounds() {
        let ok = ChatRequest::new(Component::Planner, "m", vec![Message::user("hi")]);
        assert!(ok.validate().is_ok());
        let empty = ChatRequest::new(Component::Planner, "m", vec![]);
        assert!(matches!(empty.validate(), Err(GatewayError::InvalidRequest(_))));
        let mut hot = ok.clone();
        hot.temperature = 2.5;
        assert!(hot.validate().is_err());
    }

    #[test]
    fn usage_arithmetic() {
        let a = TokenUsage::new(10, 4, 3);
        let b = TokenUsage::new(1, 0, 1);
        assert_eq!(a + b, TokenUsage::new(11, 4, 4));
        assert_eq!([a, b].into_iter().sum::<TokenUsage>(), a + b);
        assert_eq!(TokenUsage::new(2, 9, 0).cached_input_tokens, 2);
    }

    #[test]
    fn gateway_records_calls() {
        let backend = Arc::new(ScriptedBackend::new());
        backend.enqueue(["one", "two"]);
        let gw = Gateway::new(backend);
        let req = ChatRequest::new(Component::Executor, "m", vec![Message::user("abcd")]);
        gw.complete(&req).unwrap();
        gw.complete(&ChatRequest { component: Component::Verifier, ..req }).unwrap();
        assert_eq!(gw.call_count(Component::Executor), 1);
        assert_eq!(gw.call_count(Component::Verifier), 1);
        assert_eq!(gw.calls()[0].usage, TokenUsage::new(1, 0, 1));
    }

    #[test]
    fn enqueue_requires_scripted() {
        struct Null;
        impl ChatBackend for Null {
            fn complete(&self, _: &ChatRequest) -> Result<ChatResponse, GatewayError> {
                unreachable!()
            }
        }
        assert_eq!(
            scripted_enqueue(&Null, ["x"]),
            Err(GatewayError::WrongBackendKind)
        );
        let scripted = ScriptedBackend::new();
        scripted_enqueue(&scripted, ["x"]).unwrap();
    }
}
