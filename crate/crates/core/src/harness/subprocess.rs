use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde_json::Value;

use super::{Harness, HarnessError, HarnessRequest, HarnessResponse, HELLO_NAME, PROTOCOL_VERSION};

/// Slack on top of the request's own timeout before the client gives up on
/// the harness and restarts it.
const CLIENT_GRACE: Duration = Duration::from_secs(5);
const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(15);

/// Long-lived harness subprocess serving requests one at a time.
///
/// The process is started on first use. If it stops answering within the
/// request timeout plus a grace period it is killed, the request is
/// reported as a timeout and a fresh process is started for the next call.
pub struct SubprocessHarness {
    command: Vec<String>,
    process: Mutex<Option<Running>>,
}

struct Running {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<String>,
}

impl Drop for Running {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl SubprocessHarness {
    /// `command` is the program followed by its arguments.
    pub fn new<S: Into<String>>(command: impl IntoIterator<Item = S>) -> Self {
        Self {
            command: command.into_iter().map(Into::into).collect(),
            process: Mutex::new(None),
        }
    }

    fn spawn(&self) -> Result<Running, HarnessError> {
        let (program, args) = self
            .command
            .split_first()
            .ok_or_else(|| HarnessError::Unavailable("empty harness command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| HarnessError::Unavailable(format!("cannot start `{program}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let running = Running {
            child,
            stdin,
            lines: rx,
        };
        let hello = running
            .lines
            .recv_timeout(HANDSHAKE_TIMEOUT)
            .map_err(|_| HarnessError::Unavailable("no handshake from harness".into()))?;
        check_hello(&hello)?;
        Ok(running)
    }
}

fn check_hello(line: &str) -> Result<(), HarnessError> {
    let v: Value = serde_json::from_str(line)
        .map_err(|e| HarnessError::Protocol(format!("bad handshake `{line}`: {e}")))?;
    if v.get("hello").and_then(Value::as_str) != Some(HELLO_NAME)
        || v.get("v").and_then(Value::as_u64) != Some(PROTOCOL_VERSION)
    {
        return Err(HarnessError::Protocol(format!("unexpected handshake `{line}`")));
    }
    Ok(())
}

impl Harness for SubprocessHarness {
    fn evaluate(&self, request: &HarnessRequest) -> Result<HarnessResponse, HarnessError> {
        let mut guard = self.process.lock().expect("harness mutex poisoned");
        if guard.is_none() {
            *guard = Some(self.spawn()?);
        }
        let running = guard.as_mut().expect("just spawned");

        let mut line = serde_json::to_string(request)
            .map_err(|e| HarnessError::Protocol(e.to_string()))?;
        line.push('\n');
        if let Err(e) = running
            .stdin
            .write_all(line.as_bytes())
            .and_then(|_| running.stdin.flush())
        {
            *guard = None;
            return Err(HarnessError::Unavailable(format!("harness stdin closed: {e}")));
        }

        let wait = Duration::from_secs(request.timeout_s.max(1)) + CLIENT_GRACE;
        match running.lines.recv_timeout(wait) {
            Ok(reply) => serde_json::from_str(&reply).map_err(|e| {
                *guard = None;
                HarnessError::Protocol(format!("unparseable response `{reply}`: {e}"))
            }),
            Err(RecvTimeoutError::Timeout) => {
                *guard = None;
                Ok(HarnessResponse::fail("timeout", "timeout"))
            }
            Err(RecvTimeoutError::Disconnected) => {
                *guard = None;
                Err(HarnessError::Unavailable("harness exited".into()))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn handshake_validation() {
        assert!(check_hello(r#"{"hello":"vf-harness","v":1}"#).is_ok());
        assert!(check_hello(r#"{"hello":"other","v":1}"#).is_err());
        assert!(check_hello(r#"{"hello":"vf-harness","v":2}"#).is_err());
        assert!(check_hello("garbage").is_err());
    }

    #[test]
    fn missing_program_is_unavailable() {
        let h = SubprocessHarness::new(["/nonexistent/harness-binary"]);
        let err = h
            .evaluate(&HarnessRequest::exec("print(1)", "", 1))
            .unwrap_err();
        assert!(matches!(err, HarnessError::Unavailable(_)));
        let empty = SubprocessHarness::new(Vec::<String>::new());
        assert!(matches!(
            empty.evaluate(&HarnessRequest::exec("x", "", 1)),
            Err(HarnessError::Unavailable(_))
        ));
    }
}
