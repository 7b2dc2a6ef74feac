use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use skillharness::llm::{ChatProvider, CompletionRequest, HttpProvider, LlmError, ProviderConfig, RetryPolicy};
use skillharness::prompting::ChatMessage;

/// Serves the canned `(status, body)` replies in order, one per connection.
fn serve(replies: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>, std::thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    let handle = std::thread::spawn(move || {
        let mut bodies = Vec::new();
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            counter.fetch_add(1, Ordering::SeqCst);
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            bodies.push(String::from_utf8(buf).unwrap());
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
        bodies
    });
    (url, hits, handle)
}

fn provider(url: &str, attempts: usize) -> HttpProvider {
    let cfg =
        ProviderConfig { base_url: url.to_string(), retry: RetryPolicy::no_backoff(attempts), ..Default::default() };
    HttpProvider::new(&cfg, Some("k".into())).unwrap()
}

fn request() -> CompletionRequest {
    CompletionRequest {
        model: "m".into(),
        messages: vec![ChatMessage::system("s"), ChatMessage::user("u")],
        temperature: 0.0,
    }
}

const OK: &str = r#"{"choices":[{"message":{"role":"assistant","content":"Python"}}]}"#;

#[test]
fn rate_limit_is_retried() {
    let (url, hits, handle) = serve(vec![(429, "{}".into()), (503, "{}".into()), (200, OK.into())]);
    let text = provider(&url, 5).complete(&request()).unwrap();
    assert_eq!(text, "Python");
    assert_eq!(hits.load(Ordering::SeqCst), 3);
    let bodies = handle.join().unwrap();
    let sent: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
    assert_eq!(sent["temperature"], 0.0);
    assert_eq!(sent["messages"][1]["content"], "u");
}

#[test]
fn client_errors_are_not_retried() {
    let (url, hits, handle) = serve(vec![(400, r#"{"error":"bad"}"#.into())]);
    let err = provider(&url, 5).complete(&request()).unwrap_err();
    assert!(matches!(err, LlmError::Provider { status: Some(400), .. }), "{err}");
    handle.join().unwrap();
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[test]
fn retries_are_bounded() {
    let (url, hits, handle) = serve(vec![(500, "{}".into()), (500, "{}".into())]);
    let err = provider(&url, 2).complete(&request()).unwrap_err();
    assert!(matches!(err, LlmError::TimeoutExhausted { attempts: 2, .. }), "{err}");
    handle.join().unwrap();
    assert_eq!(hits.load(Ordering::SeqCst), 2);
}

#[test]
fn missing_content_is_malformed() {
    let (url, _, handle) = serve(vec![(200, r#"{"choices":[]}"#.into())]);
    let err = provider(&url, 1).complete(&request()).unwrap_err();
    assert!(matches!(err, LlmError::MalformedResponse(_)), "{err}");
    handle.join().unwrap();
}
