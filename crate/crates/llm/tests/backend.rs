use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::IntoResponse;
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use winoforge_llm::{
    mock_script, Backend, BackendConfig, BackendError, ChatRequest, ChatResponse, Dialect,
    HttpTransport, RetryPolicy, Transport, TranscriptEntry,
};

fn ok(text: &str) -> ChatResponse {
    ChatResponse {
        text: text.into(),
        prompt_tokens: 1,
        completion_tokens: 1,
        latency_ms: 0,
        provider: "test".into(),
    }
}

/// Fails the first `failures` calls with a transient error.
struct Flaky {
    failures: u32,
    calls: AtomicU32,
    error: BackendError,
}

#[async_trait]
impl Transport for Flaky {
    async fn send(&self, _req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if n < self.failures {
            Err(self.error.clone())
        } else {
            Ok(ok("recovered"))
        }
    }

    fn provider(&self) -> &str {
        "flaky"
    }
}

fn policy(max_attempts: u32) -> RetryPolicy {
    RetryPolicy {
        max_attempts,
        base_backoff_ms: 1,
    }
}

#[tokio::test]
async fn succeeds_after_two_transient_failures() {
    let flaky = Arc::new(Flaky {
        failures: 2,
        calls: AtomicU32::new(0),
        error: BackendError::Transport("reset".into()),
    });
    let backend = Backend::new(flaky.clone(), 1, policy(3));
    let resp = backend.complete(ChatRequest::new("m", "p")).await.unwrap();
    assert_eq!(resp.text, "recovered");
    assert_eq!(flaky.calls.load(Ordering::SeqCst), 3);
}

#[tokio::test]
async fn gives_up_at_max_attempts() {
    let flaky = Arc::new(Flaky {
        failures: 10,
        calls: AtomicU32::new(0),
        error: BackendError::RateLimited {
            retry_after_ms: Some(1),
        },
    });
    let backend = Backend::new(flaky.clone(), 1, policy(3));
    let err = backend.complete(ChatRequest::new("m", "p")).await.unwrap_err();
    assert!(matches!(err, BackendError::RateLimited { .. }));
    assert_eq!(flaky.calls.load(Ordering::SeqCst), 3);
}

#[tokio::test]
async fn auth_errors_are_not_retried() {
    let flaky = Arc::new(Flaky {
        failures: 10,
        calls: AtomicU32::new(0),
        error: BackendError::Auth("bad key".into()),
    });
    let backend = Backend::new(flaky.clone(), 1, policy(5));
    let err = backend.complete(ChatRequest::new("m", "p")).await.unwrap_err();
    assert!(matches!(err, BackendError::Auth(_)));
    assert_eq!(flaky.calls.load(Ordering::SeqCst), 1);
}

/// Records the peak number of concurrent `send` calls.
struct Instrumented {
    in_flight: AtomicUsize,
    peak: AtomicUsize,
    poison: Option<String>,
}

#[async_trait]
impl Transport for Instrumented {
    async fn send(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        tokio::time::sleep(Duration::from_millis(5)).await;
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        if self.poison.as_deref() == Some(req.prompt.as_str()) {
            return Err(BackendError::Provider {
                status: 400,
                body: "poisoned".into(),
            });
        }
        Ok(ok(&format!("echo {}", req.prompt)))
    }

    fn provider(&self) -> &str {
        "instrumented"
    }
}

fn requests(n: usize) -> Vec<ChatRequest> {
    (0..n)
        .map(|i| ChatRequest::new("m", format!("prompt {i}")).tag(format!("r{i}")))
        .collect()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn in_flight_never_exceeds_bound() {
    let t = Arc::new(Instrumented {
        in_flight: AtomicUsize::new(0),
        peak: AtomicUsize::new(0),
        poison: None,
    });
    let backend = Backend::new(t.clone(), 3, policy(1));
    let out = backend.complete_many(requests(10)).await;
    assert_eq!(out.len(), 10);
    let peak = t.peak.load(Ordering::SeqCst);
    assert!(peak <= 3, "peak {peak}");
    assert!(peak >= 2, "expected some overlap, peak {peak}");
    for (i, r) in out.iter().enumerate() {
        assert_eq!(r.as_ref().unwrap().text, format!("echo prompt {i}"));
    }
}

#[tokio::test]
async fn poisoned_request_yields_error_record_in_place() {
    let t = Arc::new(Instrumented {
        in_flight: AtomicUsize::new(0),
        peak: AtomicUsize::new(0),
        poison: Some("prompt 4".into()),
    });
    let backend = Backend::new(t, 3, policy(2));
    let out = backend.complete_many(requests(10)).await;
    assert_eq!(out.iter().filter(|r| r.is_ok()).count(), 9);
    let err = out[4].as_ref().unwrap_err();
    assert_eq!(err.request_tag, "r4");
    assert_eq!(err.kind, "provider");
    assert_eq!(err.attempts, 1);
    assert_eq!(out[5].as_ref().unwrap().text, "echo prompt 5");
}

#[tokio::test]
async fn mock_replay_is_identical() {
    let run = || async {
        let backend = Backend::new(Arc::new(mock_script(vec![], 42)), 4, policy(1));
        backend
            .complete_many(requests(8))
            .await
            .into_iter()
            .map(|r| r.unwrap().text)
            .collect::<Vec<_>>()
    };
    assert_eq!(run().await, run().await);
}

#[tokio::test]
async fn missing_auth_variable_is_auth_error() {
    let cfg = BackendConfig {
        endpoint: "http://127.0.0.1:9/never".into(),
        auth_env_var: Some("WINOFORGE_API_KEY_SURELY_UNSET_FOR_TESTS".into()),
        ..BackendConfig::default()
    };
    let backend = Backend::from_config(&cfg).unwrap();
    let err = backend.complete(ChatRequest::new("m", "p")).await.unwrap_err();
    assert!(matches!(err, BackendError::Auth(_)), "{err:?}");
}

#[tokio::test]
async fn transcript_has_one_line_per_attempt() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("transcript.jsonl");
    let flaky = Arc::new(Flaky {
        failures: 1,
        calls: AtomicU32::new(0),
        error: BackendError::Transport("reset".into()),
    });
    let backend = Backend::new(flaky, 1, policy(2))
        .with_transcript(&path)
        .unwrap();
    backend
        .complete(ChatRequest::new("gpt-4-0613", "hello").tag("t1"))
        .await
        .unwrap();
    let lines: Vec<TranscriptEntry> = std::fs::read_to_string(&path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].error.is_some());
    assert_eq!(lines[1].response.as_deref(), Some("recovered"));
    assert_eq!(lines[1].request_tag, "t1");
    assert_eq!(lines[1].model_id, "gpt-4-0613");
}

// --- wire dialects against a local server ---

#[derive(Clone, Default)]
struct Seen {
    calls: Arc<Mutex<Vec<(HeaderMap, Value)>>>,
    fail_first_with_429: Arc<std::sync::atomic::AtomicI32>,
}

async fn openai_handler(
    State(seen): State<Seen>,
    headers: HeaderMap,
    Json(body): Json<Value>,
) -> axum::response::Response {
    seen.calls.lock().unwrap().push((headers, body.clone()));
    if seen.fail_first_with_429.fetch_sub(1, Ordering::SeqCst) > 0 {
        return (StatusCode::TOO_MANY_REQUESTS, [("retry-after", "0")], "slow down").into_response();
    }
    Json(json!({
        "choices": [{"message": {"role": "assistant", "content": "A: 1; because"}}],
        "usage": {"prompt_tokens": 12, "completion_tokens": 3}
    }))
    .into_response()
}

async fn anthropic_handler(
    State(seen): State<Seen>,
    headers: HeaderMap,
    Json(body): Json<Value>,
) -> axum::response::Response {
    seen.calls.lock().unwrap().push((headers, body));
    Json(json!({
        "content": [{"type": "text", "text": "Final Answer: 0; "}, {"type": "text", "text": "Mary"}],
        "usage": {"input_tokens": 20, "output_tokens": 4}
    }))
    .into_response()
}

async fn unauthorized() -> impl IntoResponse {
    (StatusCode::UNAUTHORIZED, "no")
}

async fn serve(seen: Seen) -> String {
    let app = Router::new()
        .route("/v1/chat/completions", post(openai_handler))
        .route("/v1/messages", post(anthropic_handler))
        .route("/denied", post(unauthorized))
        .with_state(seen);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}")
}

fn http_backend(base: &str, path: &str, dialect: Dialect) -> Backend {
    let cfg = BackendConfig {
        endpoint: format!("{base}{path}"),
        dialect,
        retry: policy(3),
        ..BackendConfig::default()
    };
    let t = HttpTransport::with_key(&cfg, Some("sk-test".into()), "X".into()).unwrap();
    Backend::new(Arc::new(t), 2, cfg.retry)
}

#[tokio::test]
async fn openai_dialect_round_trip_with_rate_limit_retry() {
    let seen = Seen::default();
    seen.fail_first_with_429.store(1, Ordering::SeqCst);
    let base = serve(seen.clone()).await;
    let backend = http_backend(&base, "/v1/chat/completions", Dialect::OpenAi);
    let req = ChatRequest::new("gpt-4-0613", "What does `he' refer to?")
        .temperature(0.0)
        .max_tokens(64);
    let resp = backend.complete(req).await.unwrap();
    assert_eq!(resp.text, "A: 1; because");
    assert_eq!((resp.prompt_tokens, resp.completion_tokens), (12, 3));
    assert_eq!(resp.provider, "openai");

    let calls = seen.calls.lock().unwrap();
    assert_eq!(calls.len(), 2);
    let (headers, body) = &calls[1];
    assert_eq!(headers["authorization"], "Bearer sk-test");
    assert_eq!(body["model"], "gpt-4-0613");
    assert_eq!(body["max_tokens"], 64);
    assert_eq!(body["messages"][0]["role"], "user");
    assert_eq!(body["messages"][0]["content"], "What does `he' refer to?");
}

#[tokio::test]
async fn anthropic_dialect_round_trip() {
    let seen = Seen::default();
    let base = serve(seen.clone()).await;
    let backend = http_backend(&base, "/v1/messages", Dialect::Anthropic);
    let resp = backend
        .complete(ChatRequest::new("claude-2", "q"))
        .await
        .unwrap();
    assert_eq!(resp.text, "Final Answer: 0; Mary");
    assert_eq!((resp.prompt_tokens, resp.completion_tokens), (20, 4));
    let calls = seen.calls.lock().unwrap();
    let (headers, _) = &calls[0];
    assert_eq!(headers["x-api-key"], "sk-test");
    assert_eq!(headers["anthropic-version"], "2023-06-01");
}

#[tokio::test]
async fn http_401_is_auth_error() {
    let base = serve(Seen::default()).await;
    let backend = http_backend(&base, "/denied", Dialect::OpenAi);
    let err = backend.complete(ChatRequest::new("m", "q")).await.unwrap_err();
    assert!(matches!(err, BackendError::Auth(_)));
}

#[tokio::test]
async fn rate_limit_spaces_requests() {
    let backend = Backend::new(Arc::new(mock_script(vec![], 0)), 4, policy(1)).with_rate_limit(50.0);
    let started = std::time::Instant::now();
    let out = backend.complete_many(requests(60)).await;
    assert!(out.iter().all(|r| r.is_ok()));
    // bucket holds 50 tokens; the remaining 10 need ~200 ms of refill
    assert!(started.elapsed() >= Duration::from_millis(150));
}
