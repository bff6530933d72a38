use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use pathtrack::embedding::{Embedder, HttpEmbedder};
use pathtrack::generator::{Generator, OpenAiBackend};
use pathtrack::Error;
use serde_json::{json, Value};

struct Captured {
    path: String,
    auth: Option<String>,
    body: Value,
}

/// Serves the canned `(status, body)` replies in order, one per connection,
/// and records each request.
fn serve(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Captured>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut len = 0;
            let mut auth = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (name, value) = line.split_once(':').unwrap();
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => len = value.trim().parse().unwrap(),
                    "authorization" => auth = Some(value.trim().to_string()),
                    _ => {}
                }
            }
            let mut raw = vec![0; len];
            reader.read_exact(&mut raw).unwrap();
            log.lock().unwrap().push(Captured {
                path: request_line.split_whitespace().nth(1).unwrap().to_string(),
                auth,
                body: serde_json::from_slice(&raw).unwrap_or(Value::Null),
            });
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, seen)
}

fn chat_reply(content: &str) -> String {
    json!({
        "choices": [{"message": {"role": "assistant", "content": content}}],
        "usage": {"prompt_tokens": 11, "completion_tokens": 3}
    })
    .to_string()
}

#[test]
fn openai_backend_retries_server_errors_and_records_usage() {
    let (url, seen) = serve(vec![
        (500, r#"{"error": "boom"}"#.into()),
        (
            200,
            chat_reply(r#"{"entities": ["Andy Rubin", "Android"]}"#),
        ),
    ]);
    let backend = OpenAiBackend::new(&url, "sk-test", "test-model").unwrap();
    let generator = Generator::new(Arc::new(backend));
    let ents = generator
        .extract_query_entities("Who created Android?")
        .unwrap();
    assert_eq!(ents, vec!["Andy Rubin", "Android"]);
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 2);
    assert_eq!(seen[1].path, "/chat/completions");
    assert_eq!(seen[1].auth.as_deref(), Some("Bearer sk-test"));
    assert_eq!(seen[1].body["model"], "test-model");
    assert_eq!(seen[1].body["temperature"], 0.0);
    let usage = generator.ledger().snapshot();
    assert_eq!(usage.retrieval.prompt_tokens, 11);
    assert_eq!(usage.retrieval.completion_tokens, 3);
    assert_eq!(usage.retrieval.calls, 1);
}

#[test]
fn openai_client_errors_are_not_retried() {
    let (url, seen) = serve(vec![(401, r#"{"error": "bad key"}"#.into())]);
    let generator = Generator::new(Arc::new(OpenAiBackend::new(&url, "k", "m").unwrap()));
    let err = generator.extract_query_entities("q").unwrap_err();
    assert!(
        matches!(
            err,
            Error::Backend {
                retryable: false,
                ..
            }
        ),
        "{err}"
    );
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn openai_from_env_names_the_missing_variable() {
    std::env::remove_var("PATHTRACK_LLM_API_KEY");
    let err = OpenAiBackend::from_env("http://localhost:1", "m").unwrap_err();
    assert!(err.to_string().contains("PATHTRACK_LLM_API_KEY"));
}

#[test]
fn http_embedder_batches_and_validates() {
    let texts: Vec<String> = (0..70).map(|i| format!("text {i}")).collect();
    let batch = |n: usize| json!({ "vectors": vec![vec![1.0, 0.0, 0.0]; n] }).to_string();
    let (url, seen) = serve(vec![(429, "{}".into()), (200, batch(64)), (200, batch(6))]);
    let e = HttpEmbedder::new(format!("{url}/embed"), Some("tok".into()), 3).unwrap();
    let out = e.embed(&texts).unwrap();
    assert_eq!(out.len(), 70);
    assert_eq!(e.id(), format!("http/{url}/embed/3"));
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    assert_eq!(seen[1].body["texts"].as_array().unwrap().len(), 64);
    assert_eq!(seen[2].body["texts"][0], "text 64");
    assert_eq!(seen[2].auth.as_deref(), Some("Bearer tok"));
}

#[test]
fn http_embedder_rejects_wrong_dimension_and_count() {
    let (url, _) = serve(vec![
        (200, json!({"vectors": [[1.0, 2.0]]}).to_string()),
        (200, json!({"vectors": []}).to_string()),
    ]);
    let e = HttpEmbedder::new(url, None, 3).unwrap();
    let err = e.embed(&["a".to_string()]).unwrap_err();
    assert!(matches!(
        err,
        Error::DimensionMismatch {
            expected: 3,
            actual: 2
        }
    ));
    assert!(e.embed(&["a".to_string()]).is_err());
}
