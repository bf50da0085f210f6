use std::collections::{HashMap, VecDeque};
use std::sync::Mutex;

use serde_json::Value;

use super::{ChatBackend, ChatRequest, ChatResponse, Component, GatewayError, TokenUsage};

/// Characters per synthetic token.
const CHARS_PER_TOKEN: usize = 4;

/// Deterministic stand-in for a model: replays queued completions FIFO.
///
/// Responses live in a shared queue unless a queue has been set up for the
/// request's [`Component`], in which case that queue is used exclusively.
/// Usage is synthesized as `ceil(chars / 4)` tokens with no cached input.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    state: Mutex<ScriptState>,
}

#[derive(Debug, Default)]
struct ScriptState {
    shared: VecDeque<String>,
    by_component: HashMap<Component, VecDeque<String>>,
    requests: Vec<ChatRequest>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn enqueue<S: Into<String>>(&self, responses: impl IntoIterator<Item = S>) {
        let mut state = self.state.lock().expect("script poisoned");
        state.shared.extend(responses.into_iter().map(Into::into));
    }

    pub fn enqueue_for<S: Into<String>>(
        &self,
        component: Component,
        responses: impl IntoIterator<Item = S>,
    ) {
        let mut state = self.state.lock().expect("script poisoned");
        state
            .by_component
            .entry(component)
            .or_default()
            .extend(responses.into_iter().map(Into::into));
    }

    /// Builds a backend from a script document.
    ///
    /// Accepts either a JSON array of completion strings (shared queue) or
    /// an object with optional `planner`, `executor`, `verifier` and
    /// `shared` arrays.
    pub fn from_json(script: &Value) -> Result<Self, String> {
        fn strings(v: &Value, what: &str) -> Result<Vec<String>, String> {
            v.as_array()
                .ok_or_else(|| format!("`{what}` must be an array of strings"))?
                .iter()
                .map(|s| {
                    s.as_str()
                        .map(str::to_owned)
                        .ok_or_else(|| format!("`{what}` must contain only strings"))
                })
                .collect()
        }

        let backend = Self::new();
        match script {
            Value::Array(_) => backend.enqueue(strings(script, "script")?),
            Value::Object(obj) => {
                for (key, value) in obj {
                    match key.as_str() {
                        "shared" => backend.enqueue(strings(value, key)?),
                        "planner" => backend.enqueue_for(Component::Planner, strings(value, key)?),
                        "executor" => backend.enqueue_for(Component::Executor, strings(value, key)?),
                        "verifier" => backend.enqueue_for(Component::Verifier, strings(value, key)?),
                        other => return Err(format!("unknown script section `{other}`")),
                    }
                }
            }
            _ => return Err("script must be a JSON array or object".into()),
        }
        Ok(backend)
    }

    pub fn remaining(&self) -> usize {
        let state = self.state.lock().expect("script poisoned");
        state.shared.len() + state.by_component.values().map(VecDeque::len).sum::<usize>()
    }

    /// Every request received so far, in arrival order.
    pub fn requests(&self) -> Vec<ChatRequest> {
        self.state.lock().expect("script poisoned").requests.clone()
    }

    fn synthetic_usage(request: &ChatRequest, content: &str) -> TokenUsage {
        let prompt_chars: usize = request
            .messages
            .iter()
            .map(|m| m.content.chars().count())
            .sum();
        TokenUsage::new(
            prompt_chars.div_ceil(CHARS_PER_TOKEN) as u64,
            0,
            content.chars().count().div_ceil(CHARS_PER_TOKEN) as u64,
        )
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let mut state = self.state.lock().expect("script poisoned");
        state.requests.push(request.clone());
        let next = match state.by_component.get_mut(&request.component) {
            Some(queue) => queue.pop_front(),
            None => state.shared.pop_front(),
        };
        let content = next.ok_or(GatewayError::ScriptExhausted(request.component))?;
        let usage = Self::synthetic_usage(request, &content);
        Ok(ChatResponse { content, usage })
    }

    fn as_scripted(&self) -> Option<&ScriptedBackend> {
        Some(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{complete, Message};
    use serde_json::json;

    fn req(component: Component) -> ChatRequest {
        ChatRequest::new(component, "m", vec![Message::user("hello")])
    }

    #[test]
    fn fifo_then_exhausted() {
        let b = ScriptedBackend::new();
        b.enqueue(["A", "B"]);
        assert_eq!(complete(&b, &req(Component::Planner)).unwrap().content, "A");
        assert_eq!(complete(&b, &req(Component::Planner)).unwrap().content, "B");
        assert_eq!(
            complete(&b, &req(Component::Planner)),
            Err(GatewayError::ScriptExhausted(Component::Planner))
        );
    }

    #[test]
    fn empty_enqueue_is_exhausted() {
        let b = ScriptedBackend::new();
        b.enqueue(Vec::<String>::new());
        assert!(matches!(
            complete(&b, &req(Component::Executor)),
            Err(GatewayError::ScriptExhausted(_))
        ));
    }

    #[test]
    fn echo_and_usage() {
        let b = ScriptedBackend::new();
        b.enqueue(["Answer: 42"]);
        let resp = complete(&b, &req(Component::Executor)).unwrap();
        assert_eq!(resp.content, "Answer: 42");
        // "hello" = 5 chars -> 2 tokens; "Answer: 42" = 10 chars -> 3 tokens.
        assert_eq!(resp.usage, TokenUsage::new(2, 0, 3));
    }

    #[test]
    fn component_queues_take_precedence() {
        let b = ScriptedBackend::from_json(&json!({
            "planner": ["plan"],
            "shared": ["s1"]
        }))
        .unwrap();
        assert_eq!(complete(&b, &req(Component::Executor)).unwrap().content, "s1");
        assert_eq!(complete(&b, &req(Component::Planner)).unwrap().content, "plan");
        assert!(complete(&b, &req(Component::Planner)).is_err());
        assert_eq!(b.requests().len(), 3);
        assert!(ScriptedBackend::from_json(&json!({"judge": []})).is_err());
        assert!(ScriptedBackend::from_json(&json!([1])).is_err());
    }

    #[test]
    fn deterministic_replay() {
        let run = || {
            let b = ScriptedBackend::new();
            b.enqueue(["x", "yy", "zzz"]);
            (0..3)
                .map(|_| complete(&b, &req(Component::Executor)).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
