//! HTTP transport against a scripted local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use pkgrec_core::profiler::{llm_complete, LlmClientConfig, LlmError, PromptBundle};

/// Serves one scripted `(status, body)` per connection and records how many
/// requests arrived.
fn serve(script: Vec<(u16, String)>) -> (String, Arc<Mutex<usize>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!(
        "http://{}/v1/chat/completions",
        listener.local_addr().unwrap()
    );
    let hits = Arc::new(Mutex::new(0));
    let counter = Arc::clone(&hits);
    thread::spawn(move || {
        for (status, body) in script {
            let Ok((stream, _)) = listener.accept() else {
                return;
            };
            let mut reader = BufReader::new(stream);
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap_or(0);
                }
            }
            let mut payload = vec![0; len];
            reader.read_exact(&mut payload).unwrap();
            *counter.lock().unwrap() += 1;
            let mut stream = reader.into_inner();
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    (url, hits)
}

fn completion(text: &str) -> (u16, String) {
    (
        200,
        serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]})
            .to_string(),
    )
}

fn config(url: String) -> LlmClientConfig {
    LlmClientConfig {
        endpoint: url,
        model: "stub".into(),
        max_retries: 3,
        backoff_base_secs: 0.0,
        timeout_secs: 5.0,
        max_parallel: 1,
        api_key_env: None,
    }
}

fn bundle() -> PromptBundle {
    PromptBundle::new("Summarize.", Vec::new())
}

#[test]
fn plain_completion() {
    let (url, hits) = serve(vec![completion("ok")]);
    assert_eq!(llm_complete(&config(url), &bundle()).unwrap(), "ok");
    assert_eq!(*hits.lock().unwrap(), 1);
}

#[test]
fn rate_limit_is_retried() {
    let limited = (429, "{}".to_owned());
    let (url, hits) = serve(vec![limited.clone(), limited, completion("fine")]);
    assert_eq!(llm_complete(&config(url), &bundle()).unwrap(), "fine");
    assert_eq!(*hits.lock().unwrap(), 3);
}

#[test]
fn persistent_rate_limit_gives_up() {
    let cfg = config(String::new());
    let attempts = cfg.max_retries as usize + 1;
    let (url, hits) = serve(vec![(429, "{}".to_owned()); attempts]);
    let err = llm_complete(
        &LlmClientConfig {
            endpoint: url,
            ..cfg
        },
        &bundle(),
    )
    .unwrap_err();
    assert_eq!(err, LlmError::RateLimited(attempts as u32));
    assert_eq!(*hits.lock().unwrap(), attempts);
}

#[test]
fn empty_content_is_an_error() {
    let (url, _) = serve(vec![completion("  ")]);
    assert_eq!(
        llm_complete(&config(url), &bundle()).unwrap_err(),
        LlmError::EmptyCompletion
    );
}

#[test]
fn server_error_is_not_retried() {
    let (url, hits) = serve(vec![(500, "{}".to_owned())]);
    assert_eq!(
        llm_complete(&config(url), &bundle()).unwrap_err(),
        LlmError::HttpError(500)
    );
    assert_eq!(*hits.lock().unwrap(), 1);
}

#[test]
fn missing_key_variable() {
    let cfg = LlmClientConfig {
        api_key_env: Some("PKGREC_TEST_KEY_THAT_IS_NOT_SET".into()),
        ..config("http://127.0.0.1:9".into())
    };
    assert!(matches!(
        llm_complete(&cfg, &bundle()),
        Err(LlmError::MissingApiKey(_))
    ));
}
