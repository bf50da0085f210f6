//! Tool registry and built-in tools.
//!
//! Tools are driven through the ReAct text channel: the model names a tool
//! and passes a JSON object of arguments, and receives the observation text
//! back. Handler failures never escape [`ToolRegistry::invoke`]; they become
//! error observations the agent can react to.

mod calculator;
mod code;
mod corpus;
mod files;

use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub use calculator::{calculator_eval, calculator_tool, EvalError};
pub use code::{run_code, run_code_tool, DEFAULT_CODE_TIMEOUT_S};
pub use corpus::{
    corpus_search_tool, Article, Corpus, CorpusError, FieldFilter, SearchHit, SearchPage,
    FILTER_FIELDS,
};
pub use files::{file_tools, ScratchDir};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ToolError {
    #[error("tool `{0}` is already registered")]
    DuplicateTool(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub description: String,
    /// JSON object mapping argument names to descriptions.
    pub args_schema: Value,
}

impl ToolDescriptor {
    pub fn new(name: impl Into<String>, description: impl Into<String>, args_schema: Value) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            args_schema,
        }
    }

    /// Prompt rendering of one tool.
    pub fn render(&self) -> String {
        format!(
            "> Tool Name: {}\nTool Description: {}\nTool Args: {}\n",
            self.name, self.description, self.args_schema
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolResult {
    pub observation: String,
    pub is_error: bool,
}

impl ToolResult {
    pub fn ok(observation: impl Into<String>) -> Self {
        Self::build(observation.into(), false)
    }

    pub fn error(observation: impl Into<String>) -> Self {
        Self::build(observation.into(), true)
    }

    fn build(observation: String, is_error: bool) -> Self {
        let observation = if observation.trim().is_empty() {
            "(no output)".to_string()
        } else {
            observation
        };
        Self { observation, is_error }
    }
}

/// Handler signature: parsed argument object in, observation or error text out.
pub type ToolHandler = Arc<dyn Fn(&Map<String, Value>) -> Result<String, String> + Send + Sync>;

/// A descriptor paired with its handler.
#[derive(Clone)]
pub struct Tool {
    pub descriptor: ToolDescriptor,
    pub handler: ToolHandler,
}

impl Tool {
    pub fn new<F>(descriptor: ToolDescriptor, handler: F) -> Self
    where
        F: Fn(&Map<String, Value>) -> Result<String, String> + Send + Sync + 'static,
    {
        Self {
            descriptor,
            handler: Arc::new(handler),
        }
    }
}

#[derive(Clone, Default)]
pub struct ToolRegistry {
    tools: Vec<Tool>,
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, tool: Tool) -> Result<(), ToolError> {
        if self.get(&tool.descriptor.name).is_some() {
            return Err(ToolError::DuplicateTool(tool.descriptor.name));
        }
        self.tools.push(tool);
        Ok(())
    }

    pub fn register_fn<F>(&mut self, descriptor: ToolDescriptor, handler: F) -> Result<(), ToolError>
    where
        F: Fn(&Map<String, Value>) -> Result<String, String> + Send + Sync + 'static,
    {
        self.register(Tool::new(descriptor, handler))
    }

    pub fn get(&self, name: &str) -> Option<&Tool> {
        self.tools.iter().find(|t| t.descriptor.name == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.tools.iter().map(|t| t.descriptor.name.as_str()).collect()
    }

    pub fn descriptors(&self) -> impl Iterator<Item = &ToolDescriptor> {
        self.tools.iter().map(|t| &t.descriptor)
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    /// Tool list text for the planner and executor prompts; empty when no
    /// tools are registered.
    pub fn render(&self) -> String {
        self.tools
            .iter()
            .map(|t| t.descriptor.render())
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Invokes `name` with raw JSON argument text.
    pub fn invoke(&self, name: &str, args_json: &str) -> ToolResult {
        match serde_json::from_str::<Value>(crate::text::strip_code_fence(args_json)) {
            Ok(value) => self.invoke_value(name, &value),
            Err(err) => ToolResult::error(format!("malformed args JSON for `{name}`: {err}")),
        }
    }

    pub fn invoke_value(&self, name: &str, args: &Value) -> ToolResult {
        let Some(tool) = self.get(name) else {
            let known = self.names().join(", ");
            return ToolResult::error(format!("unknown tool `{name}` (available: {known})"));
        };
        let Value::Object(map) = args else {
            return ToolResult::error(format!(
                "malformed args JSON for `{name}`: expected an object, got {args}"
            ));
        };
        match catch_unwind(AssertUnwindSafe(|| (tool.handler)(map))) {
            Ok(Ok(text)) => ToolResult::ok(text),
            Ok(Err(text)) => ToolResult::error(text),
            Err(panic) => {
                let detail = panic
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| panic.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "unknown panic".to_string());
                ToolResult::error(format!("tool `{name}` crashed: {detail}"))
            }
        }
    }
}

impl fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ToolRegistry").field("tools", &self.names()).finish()
    }
}

/// Reads a required string argument.
pub(crate) fn str_arg<'a>(args: &'a Map<String, Value>, key: &str) -> Result<&'a str, String> {
    match args.get(key) {
        Some(Value::String(s)) => Ok(s),
        Some(other) => Err(format!("argument `{key}` must be a string, got {other}")),
        None => Err(format!("missing required argument `{key}`")),
    }
}

/// Reads an optional non-negative integer argument.
pub(crate) fn uint_arg(args: &Map<String, Value>, key: &str) -> Result<Option<u64>, String> {
    match args.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_u64()
            .map(Some)
            .ok_or_else(|| format!("argument `{key}` must be a non-negative integer, got {v}")),
    }
}
