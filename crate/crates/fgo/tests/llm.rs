use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use fgo::core::text::estimate_tokens;
use fgo::llm::{
    ChatBackend, LlmClient, LlmError, Matcher, Message, MockBackend, OpenAiBackend, Reply, RequestTag, RetryPolicy,
    TokenLedger, Transcript,
};

/// A one-shot HTTP server answering every request with a canned status
/// and body. Returns the base URL and the raw requests it saw.
fn fake_server(responses: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for (status, body) in responses {
            let Ok((stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream);
            let mut head = String::new();
            let mut length = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap_or(0);
                }
                head.push_str(&line);
            }
            let mut payload = vec![0; length];
            reader.read_exact(&mut payload).unwrap();
            log.lock().unwrap().push(format!("{head}\r\n{}", String::from_utf8_lossy(&payload)));
            let mut stream = reader.into_inner();
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    (format!("http://{addr}/v1"), seen)
}

fn ok_body(content: &str) -> String {
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": content}, "finish_reason": "stop"}],
        "usage": {"prompt_tokens": 17, "completion_tokens": 5}
    })
    .to_string()
}

fn client_for(url: &str) -> LlmClient {
    let backend = OpenAiBackend::new(url, Some("secret".into()), Duration::from_secs(10));
    LlmClient::new(Arc::new(backend)).with_retry(RetryPolicy::none())
}

#[test]
fn openai_success_records_reported_usage() {
    let (url, seen) = fake_server(vec![(200, ok_body("final answer: 847 5321 9084"))]);
    let client = client_for(&url);
    let resp = client.ask(RequestTag::AgentStep, "find the reference").unwrap();
    assert_eq!(resp.content, "final answer: 847 5321 9084");
    assert_eq!((resp.prompt_tokens, resp.completion_tokens), (17, 5));
    assert_eq!(client.ledger().calls(RequestTag::AgentStep), 1);
    assert_eq!(client.ledger().total().prompt_tokens, 17);

    let raw = seen.lock().unwrap()[0].clone();
    assert!(raw.starts_with("POST /v1/chat/completions"));
    assert!(raw.to_ascii_lowercase().contains("authorization: bearer secret"));
    let body: serde_json::Value = serde_json::from_str(raw.split("\r\n\r\n").last().unwrap()).unwrap();
    assert_eq!(body["model"], "mock");
    assert_eq!(body["messages"][0]["content"], "find the reference");
}

#[test]
fn openai_status_codes_map_to_error_kinds() {
    type Case = (u16, &'static str, fn(&LlmError) -> bool);
    let cases: Vec<Case> = vec![
        (401, r#"{"error":{"message":"bad key"}}"#, |e| matches!(e, LlmError::Auth(_))),
        (
            400,
            r#"{"error":{"message":"This model's maximum context length is 8192 tokens","code":"context_length_exceeded"}}"#,
            |e| matches!(e, LlmError::ContextWindowExceeded(_)),
        ),
        (400, r#"{"error":{"message":"unknown field"}}"#, |e| matches!(e, LlmError::InvalidRequest(_))),
        (429, r#"{"error":{"message":"slow down"}}"#, |e| matches!(e, LlmError::Transport(_))),
        (503, "unavailable", |e| matches!(e, LlmError::Transport(_))),
        (200, "not json", |e| matches!(e, LlmError::Transport(_))),
    ];
    for (status, body, expected) in cases {
        let (url, _) = fake_server(vec![(status, body.to_string())]);
        let client = client_for(&url);
        let err = client.ask(RequestTag::Optimize, "improve").unwrap_err();
        assert!(expected(&err), "HTTP {status}: {err:?}");
        assert!(client.ledger().is_empty(), "failed calls are not recorded");
    }
}

#[test]
fn transient_failures_are_retried_then_succeed() {
    let (url, seen) = fake_server(vec![(500, "boom".into()), (200, ok_body("done"))]);
    let backend = OpenAiBackend::new(&url, None, Duration::from_secs(10));
    let client = LlmClient::new(Arc::new(backend)).with_retry(RetryPolicy {
        attempts: 3,
        base_ms: 1,
        cap_ms: 2,
    });
    assert_eq!(client.ask(RequestTag::Merge, "merge").unwrap().content, "done");
    assert_eq!(seen.lock().unwrap().len(), 2);
    assert_eq!(client.ledger().calls(RequestTag::Merge), 1);
}

#[test]
fn endpoint_forms_resolve_to_chat_completions() {
    for endpoint in ["http://h/v1", "http://h/v1/", "http://h/v1/chat/completions"] {
        let b = OpenAiBackend::new(endpoint, None, Duration::from_secs(1));
        assert_eq!(b.url(), "http://h/v1/chat/completions");
    }
}

#[test]
fn mock_replies_are_deterministic_and_scripted() {
    let build = || {
        MockBackend::builder()
            .seed(5)
            .on(RequestTag::Merge, Matcher::Any, Reply::Template("merged {seed}".into()))
            .on_any(Matcher::Any, Reply::Template("other".into()))
            .build()
    };
    let (a, b) = (LlmClient::new(Arc::new(build())), LlmClient::new(Arc::new(build())));
    for client in [&a, &b] {
        assert_eq!(client.ask(RequestTag::Merge, "x").unwrap().content, "merged 5");
        assert_eq!(client.ask(RequestTag::Optimize, "y").unwrap().content, "other");
    }
    assert_eq!(a.ledger().events(), b.ledger().events());
}

#[test]
fn mock_context_limit_rejects_large_prompts() {
    let mock = MockBackend::builder()
        .context_limit(4_000)
        .on_any(Matcher::Any, Reply::Template("ok".into()))
        .build();
    let client = LlmClient::new(Arc::new(mock));
    let big = "x".repeat(5_000 * 4);
    assert_eq!(estimate_tokens(&big), 5_000);
    assert!(matches!(client.ask(RequestTag::Optimize, big), Err(LlmError::ContextWindowExceeded(_))));
    assert!(client.ask(RequestTag::Optimize, "small").is_ok());
    assert_eq!(client.ledger().len(), 1);
}

#[test]
fn ledger_sums_sequential_calls() {
    let mock = MockBackend::builder().on_any(Matcher::Any, Reply::Template("abcdefgh".into())).build();
    let client = LlmClient::new(Arc::new(mock));
    let r1 = client.ask(RequestTag::AgentStep, "one").unwrap();
    let r2 = client.ask(RequestTag::AgentStep, "two two two").unwrap();
    let total = client.ledger().total();
    assert_eq!(total.prompt_tokens, r1.prompt_tokens + r2.prompt_tokens);
    assert_eq!(total.completion_tokens, r1.completion_tokens + r2.completion_tokens);
    assert_eq!(total.calls, 2);
}

#[test]
fn token_estimate_examples() {
    assert_eq!(estimate_tokens(""), 0);
    assert_eq!(estimate_tokens("abcdefgh"), 2);
    for (a, b) in [("short", "a much longer piece of text"), ("", "x"), ("résumé", "naïve")] {
        let joined = format!("{a}{b}");
        assert!(estimate_tokens(&joined) >= estimate_tokens(a).max(estimate_tokens(b)));
    }
}

#[test]
fn concurrent_appends_are_all_kept() {
    let ledger = Arc::new(TokenLedger::new());
    thread::scope(|s| {
        for w in 0..8 {
            let ledger = ledger.clone();
            s.spawn(move || {
                for _ in 0..10_000 {
                    ledger.record(RequestTag::ALL[w % 4], 1, 1, 0);
                }
            });
        }
    });
    assert_eq!(ledger.len(), 80_000);
    assert!(ledger.is_conserved());
    let events = ledger.events();
    let rebuilt = TokenLedger::from_events(events.clone());
    assert_eq!(rebuilt.totals(), ledger.totals());
    assert_eq!(TokenLedger::fold(&events), ledger.totals());
}

#[test]
fn transcript_logs_successes_and_failures() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("calls/transcript.jsonl");
    let mock = MockBackend::builder()
        .context_limit(10)
        .on_any(Matcher::Any, Reply::Template("fine".into()))
        .build();
    let client = LlmClient::new(Arc::new(mock)).with_transcript(Arc::new(Transcript::create(&path).unwrap()));
    client.ask(RequestTag::AgentStep, "hi").unwrap();
    client
        .complete(&client.request(RequestTag::Optimize, vec![Message::user("y".repeat(400))]))
        .unwrap_err();
    let lines: Vec<serde_json::Value> = std::fs::read_to_string(&path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["response"]["content"], "fine");
    assert!(lines[1]["error"].as_str().unwrap().contains("context window"));
}

#[test]
fn describe_names_the_backend() {
    let b = OpenAiBackend::new("http://localhost:9/v1", None, Duration::from_secs(1));
    assert!(b.describe().contains("http://localhost:9/v1/chat/completions"));
}
