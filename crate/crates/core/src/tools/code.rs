//! Code execution through the harness exec mode.

use serde_json::json;

use super::{str_arg, uint_arg, Tool, ToolDescriptor, ToolResult};
use crate::harness::{HarnessError, HarnessRequest, SharedHarness};

pub const DEFAULT_CODE_TIMEOUT_S: u64 = 10;

/// Runs `code` in the harness; stdout plus any traceback becomes the observation.
pub fn run_code(
    harness: &SharedHarness,
    code: &str,
    stdin: &str,
    timeout_s: u64,
) -> Result<ToolResult, HarnessError> {
    let response = harness.evaluate(&HarnessRequest::exec(code, stdin, timeout_s))?;
    if response.passed {
        return Ok(ToolResult::ok(response.stdout));
    }
    let mut text = response.stdout.clone();
    if !text.is_empty() && !text.ends_with('\n') {
        text.push('\n');
    }
    text.push_str(&response.failure_text());
    Ok(ToolResult::error(text))
}

pub fn run_code_tool(harness: SharedHarness) -> Tool {
    Tool::new(
        ToolDescriptor::new(
            "run_code",
            "Executes a Python snippet in a sandbox and returns its printed output. Print anything you need to see.",
            json!({
                "code": "the Python source to run",
                "stdin": "optional text passed on standard input",
                "timeout_s": "optional time limit in seconds"
            }),
        ),
        move |args| {
            let code = str_arg(args, "code")?;
            let stdin = match args.get("stdin") {
                Some(serde_json::Value::String(s)) => s.as_str(),
                _ => "",
            };
            let timeout = uint_arg(args, "timeout_s")?.unwrap_or(DEFAULT_CODE_TIMEOUT_S);
            match run_code(&harness, code, stdin, timeout) {
                Ok(result) if result.is_error => Err(result.observation),
                Ok(result) => Ok(result.observation),
                Err(err) => Err(err.to_string()),
            }
        },
    )
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::harness::{BuiltinHarness, FnHarness, HarnessResponse};
    use crate::tools::ToolRegistry;

    #[test]
    fn prints_are_observed() {
        let harness: SharedHarness = Arc::new(BuiltinHarness);
        let result = run_code(&harness, "print(1+1)", "", 2).unwrap();
        assert!(!result.is_error);
        assert!(result.observation.contains('2'));
    }

    #[test]
    fn timeout_and_errors_are_flagged() {
        let harness: SharedHarness = Arc::new(FnHarness(|req: &HarnessRequest| {
            Ok(if req.code.contains("while True") {
                HarnessResponse::fail("timeout", "timeout")
            } else {
                HarnessResponse::fail("SyntaxError", "Traceback ...\nSyntaxError: invalid syntax")
            })
        }));
        let looped = run_code(&harness, "while True: pass", "", 2).unwrap();
        assert!(looped.is_error && looped.observation.contains("timeout"));
        let broken = run_code(&harness, "def (", "", 2).unwrap();
        assert!(broken.is_error && broken.observation.contains("Traceback"));
    }

    #[test]
    fn unavailable_harness_surfaces() {
        let harness: SharedHarness =
            Arc::new(FnHarness(|_: &HarnessRequest| Err(HarnessError::Unavailable("gone".into()))));
        assert!(matches!(run_code(&harness, "print(1)", "", 1), Err(HarnessError::Unavailable(_))));
        let mut reg = ToolRegistry::new();
        reg.register(run_code_tool(harness)).unwrap();
        let result = reg.invoke("run_code", r#"{"code":"print(1)"}"#);
        assert!(result.is_error && result.observation.contains("unavailable"));
    }
}
