use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::thread;
use std::time::Duration;

use serde_json::Value;
use verimap_core::gateway::{
    complete, ChatRequest, Component, GatewayError, HttpBackend, HttpConfig, Message, RetryPolicy, TokenUsage,
};

/// Serves the given `(status, body)` replies in order and returns the
/// request bodies it saw.
fn stub(replies: Vec<(u16, String)>) -> (String, thread::JoinHandle<Vec<(String, Value)>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}/v1", listener.local_addr().unwrap());
    let handle = thread::spawn(move || {
        let mut seen = Vec::new();
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut length = 0usize;
            let mut auth = String::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
                if lower.starts_with("authorization:") {
                    auth = line.trim().to_string();
                }
            }
            let mut buf = vec![0; length];
            reader.read_exact(&mut buf).unwrap();
            seen.push((auth, serde_json::from_slice(&buf).unwrap()));
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
        seen
    });
    (base, handle)
}

fn config(base: String) -> HttpConfig {
    HttpConfig {
        base_url: base,
        api_key: Some("sk-test".into()),
        timeout: Duration::from_secs(5),
        retry: RetryPolicy {
            max_attempts: 3,
            initial_backoff: Duration::from_millis(10),
        },
    }
}

fn request() -> ChatRequest {
    ChatRequest::new(Component::Executor, "gpt-4o-mini", vec![Message::system("s"), Message::user("u")])
}

const OK_BODY: &str = r#"{"choices":[{"message":{"role":"assistant","content":"Answer: 4"}}],"usage":{"prompt_tokens":50,"completion_tokens":5,"prompt_tokens_details":{"cached_tokens":20}}}"#;

#[test]
fn retries_transient_errors_then_succeeds() {
    let (base, server) = stub(vec![(503, "{}".into()), (200, OK_BODY.into())]);
    let backend = HttpBackend::new(config(base)).unwrap();
    let resp = complete(&backend, &request()).unwrap();
    assert_eq!(resp.content, "Answer: 4");
    assert_eq!(resp.usage, TokenUsage::new(50, 20, 5));
    let seen = server.join().unwrap();
    assert_eq!(seen.len(), 2);
    let (auth, body) = &seen[1];
    assert_eq!(auth.to_ascii_lowercase(), "authorization: bearer sk-test");
    assert_eq!(body["model"], "gpt-4o-mini");
    assert_eq!(body["temperature"], 1.0);
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["content"], "u");
}

#[test]
fn auth_failure_is_not_retried() {
    let (base, server) = stub(vec![(401, r#"{"error":"bad key"}"#.into())]);
    let backend = HttpBackend::new(config(base)).unwrap();
    assert!(matches!(complete(&backend, &request()), Err(GatewayError::Auth(_))));
    assert_eq!(server.join().unwrap().len(), 1);
}

#[test]
fn gives_up_after_bounded_attempts() {
    let (base, server) = stub(vec![(500, "{}".into()), (500, "{}".into()), (429, "{}".into())]);
    let backend = HttpBackend::new(config(base)).unwrap();
    match complete(&backend, &request()) {
        Err(GatewayError::Transport { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(server.join().unwrap().len(), 3);
}
