//! Client side of the code-execution harness.
//!
//! Executable verification functions and the `run_code` tool are evaluated
//! by a harness speaking a line-delimited JSON protocol: one
//! [`HarnessRequest`] per line in, one [`HarnessResponse`] per line out,
//! after a `{"hello":"vf-harness","v":1}` handshake.
//!
//! [`SubprocessHarness`] drives an external harness process.
//! [`BuiltinHarness`] evaluates a small assertion subset in-process and is
//! what offline runs and tests use when no interpreter is configured.

mod builtin;
mod subprocess;

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub use builtin::BuiltinHarness;
pub use subprocess::SubprocessHarness;

pub const PROTOCOL_VERSION: u64 = 1;
pub const HELLO_NAME: &str = "vf-harness";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HarnessError {
    #[error("harness unavailable: {0}")]
    Unavailable(String),
    #[error("harness protocol error: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HarnessMode {
    /// Run assertion code with `inputs` and `outputs` bound.
    Vf,
    /// Run arbitrary code and capture its output.
    Exec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessRequest {
    pub mode: HarnessMode,
    pub code: String,
    pub inputs: Value,
    pub outputs: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stdin: Option<String>,
    pub timeout_s: u64,
}

impl HarnessRequest {
    pub fn vf(code: impl Into<String>, inputs: Value, outputs: Value, timeout_s: u64) -> Self {
        Self {
            mode: HarnessMode::Vf,
            code: code.into(),
            inputs,
            outputs,
            stdin: None,
            timeout_s: timeout_s.max(1),
        }
    }

    pub fn exec(code: impl Into<String>, stdin: impl Into<String>, timeout_s: u64) -> Self {
        let stdin = stdin.into();
        Self {
            mode: HarnessMode::Exec,
            code: code.into(),
            inputs: Value::Object(Map::new()),
            outputs: Value::Object(Map::new()),
            stdin: (!stdin.is_empty()).then_some(stdin),
            timeout_s: timeout_s.max(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarnessResponse {
    pub passed: bool,
    #[serde(default)]
    pub stdout: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traceback: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_type: Option<String>,
    #[serde(default)]
    pub duration_ms: u64,
}

impl HarnessResponse {
    pub fn pass(stdout: impl Into<String>) -> Self {
        Self {
            passed: true,
            stdout: stdout.into(),
            traceback: None,
            error_type: None,
            duration_ms: 0,
        }
    }

    pub fn fail(error_type: impl Into<String>, traceback: impl Into<String>) -> Self {
        Self {
            passed: false,
            stdout: String::new(),
            traceback: Some(traceback.into()),
            error_type: Some(error_type.into()),
            duration_ms: 0,
        }
    }

    pub fn timed_out(&self) -> bool {
        self.error_type.as_deref() == Some("timeout")
    }

    /// Failure text: the traceback when present, else the error type.
    pub fn failure_text(&self) -> String {
        match (&self.traceback, &self.error_type) {
            (Some(tb), _) if !tb.trim().is_empty() => tb.clone(),
            (_, Some(kind)) => kind.clone(),
            _ => "harness reported failure without details".to_string(),
        }
    }
}

/// Anything that can evaluate harness requests.
pub trait Harness: Send + Sync {
    fn evaluate(&self, request: &HarnessRequest) -> Result<HarnessResponse, HarnessError>;
}

pub type SharedHarness = Arc<dyn Harness>;

/// Harness backed by a closure, for tests and embedding.
pub struct FnHarness<F>(pub F);

impl<F> Harness for FnHarness<F>
where
    F: Fn(&HarnessRequest) -> Result<HarnessResponse, HarnessError> + Send + Sync,
{
    fn evaluate(&self, request: &HarnessRequest) -> Result<HarnessResponse, HarnessError> {
        let started = Instant::now();
        let mut resp = (self.0)(request)?;
        if resp.duration_ms == 0 {
            resp.duration_ms = started.elapsed().as_millis() as u64;
        }
        Ok(resp)
    }
}
