//! HTTP provider clients against a local stand-in for an OpenAI-style API:
//! request shape, usage passthrough, retry on transient failures, and error
//! classification.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::IntoResponse;
use axum::routing::post;
use axum::{Json, Router};

use tgrag::config::{
    EmbeddingProviderConfig, LlmProviderConfig, ProviderKind, Providers, ProvidersConfig,
    ENV_EMBED_ENDPOINT, ENV_LLM_API_KEY, ENV_LLM_ENDPOINT, ENV_LLM_MODEL,
};
use tgrag::embed::{EmbeddingProvider, HttpEmbedder};
use tgrag::error::{Error, ProviderErrorKind};
use tgrag::provider::{ChatRequest, HttpLlm, LlmProvider, RetryPolicy};

#[derive(Default)]
struct FakeApi {
    chat_calls: AtomicU32,
    /// Number of leading requests answered with 429 before succeeding.
    rate_limit_first: u32,
    /// When set, require this bearer token.
    expect_token: Option<String>,
}

async fn chat_handler(
    State(api): State<Arc<FakeApi>>,
    headers: axum::http::HeaderMap,
    Json(body): Json<serde_json::Value>,
) -> axum::response::Response {
    let call = api.chat_calls.fetch_add(1, Ordering::SeqCst) + 1;
    if let Some(token) = &api.expect_token {
        let ok = headers
            .get("authorization")
            .and_then(|v| v.to_str().ok())
            .map(|v| v == format!("Bearer {token}"))
            .unwrap_or(false);
        if !ok {
            return (StatusCode::UNAUTHORIZED, "bad token").into_response();
        }
    }
    if call <= api.rate_limit_first {
        return (StatusCode::TOO_MANY_REQUESTS, "slow down").into_response();
    }
    let prompt = body["messages"][0]["content"].as_str().unwrap_or("");
    Json(serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": format!("echo:{}", &prompt[..prompt.len().min(20)])}}],
        "usage": {"prompt_tokens": 11, "completion_tokens": 3},
        "model": body["model"],
    }))
    .into_response()
}

async fn embed_handler(Json(body): Json<serde_json::Value>) -> Json<serde_json::Value> {
    let inputs = body["input"].as_array().cloned().unwrap_or_default();
    let data: Vec<serde_json::Value> = inputs
        .iter()
        .enumerate()
        .map(|(i, _)| serde_json::json!({"embedding": [1.0 + i as f64, 0.5, -0.25, 0.0]}))
        .collect();
    Json(serde_json::json!({"data": data}))
}

fn spawn_api(api: Arc<FakeApi>) -> SocketAddr {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let app = Router::new()
                .route("/v1/chat/completions", post(chat_handler))
                .route("/v1/embeddings", post(embed_handler))
                .with_state(api);
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    rx.recv().unwrap()
}

fn no_backoff() -> RetryPolicy {
    RetryPolicy {
        attempts: 3,
        base_delay_ms: 0,
    }
}

#[test]
fn chat_round_trip_with_usage_passthrough() {
    let addr = spawn_api(Arc::new(FakeApi::default()));
    let llm = HttpLlm::new(
        format!("http://{addr}/v1/chat/completions"),
        "test-model".into(),
        None,
        no_backoff(),
    );
    let resp = llm
        .complete(&ChatRequest::new("t", "hello over http".into(), 64))
        .unwrap();
    assert!(resp.text.starts_with("echo:hello over http"));
    assert_eq!(resp.prompt_tokens, 11);
    assert_eq!(resp.completion_tokens, 3);
    assert_eq!(llm.token_meter().prompt_tokens, 11);
}

#[test]
fn rate_limits_are_retried_with_bounded_attempts() {
    let api = Arc::new(FakeApi {
        rate_limit_first: 2,
        ..Default::default()
    });
    let addr = spawn_api(api.clone());
    let llm = HttpLlm::new(
        format!("http://{addr}/v1/chat/completions"),
        "m".into(),
        None,
        no_backoff(),
    );
    let resp = llm
        .complete(&ChatRequest::new("t", "retry me".into(), 64))
        .unwrap();
    assert!(resp.text.starts_with("echo:"));
    assert_eq!(api.chat_calls.load(Ordering::SeqCst), 3);

    // four consecutive 429s exhaust the three attempts
    let api = Arc::new(FakeApi {
        rate_limit_first: 4,
        ..Default::default()
    });
    let addr = spawn_api(api.clone());
    let llm = HttpLlm::new(
        format!("http://{addr}/v1/chat/completions"),
        "m".into(),
        None,
        no_backoff(),
    );
    let err = llm
        .complete(&ChatRequest::new("t", "never".into(), 64))
        .unwrap_err();
    assert!(matches!(
        err,
        Error::Provider {
            kind: ProviderErrorKind::RateLimit,
            ..
        }
    ));
    assert_eq!(api.chat_calls.load(Ordering::SeqCst), 3);
}

#[test]
fn auth_failures_are_permanent() {
    let api = Arc::new(FakeApi {
        expect_token: Some("sesame".into()),
        ..Default::default()
    });
    let addr = spawn_api(api.clone());
    let llm = HttpLlm::new(
        format!("http://{addr}/v1/chat/completions"),
        "m".into(),
        Some("wrong".into()),
        no_backoff(),
    );
    let err = llm
        .complete(&ChatRequest::new("t", "x".into(), 64))
        .unwrap_err();
    assert!(matches!(
        err,
        Error::Provider {
            kind: ProviderErrorKind::Auth,
            ..
        }
    ));
    // no retries on auth errors
    assert_eq!(api.chat_calls.load(Ordering::SeqCst), 1);

    // correct token goes through
    let llm = HttpLlm::new(
        format!("http://{addr}/v1/chat/completions"),
        "m".into(),
        Some("sesame".into()),
        no_backoff(),
    );
    assert!(llm.complete(&ChatRequest::new("t", "x".into(), 64)).is_ok());
}

#[test]
fn embeddings_round_trip_and_count_check() {
    let addr = spawn_api(Arc::new(FakeApi::default()));
    let embedder = HttpEmbedder {
        endpoint: format!("http://{addr}/v1/embeddings"),
        model: "embed-model".into(),
        api_key: None,
        dim: 4,
        retry: no_backoff(),
    };
    let vectors = embedder
        .embed(&["first".to_string(), "second".to_string()])
        .unwrap();
    assert_eq!(vectors.len(), 2);
    assert_eq!(vectors[0].0, vec![1.0, 0.5, -0.25, 0.0]);
    assert_eq!(vectors[1].0[0], 2.0);
}

#[test]
fn unreachable_endpoint_is_a_network_error() {
    // a port nothing listens on
    let llm = HttpLlm::new(
        "http://127.0.0.1:1/v1/chat/completions".into(),
        "m".into(),
        None,
        RetryPolicy {
            attempts: 2,
            base_delay_ms: 0,
        },
    );
    let err = llm
        .complete(&ChatRequest::new("t", "x".into(), 8))
        .unwrap_err();
    assert!(matches!(
        err,
        Error::Provider {
            kind: ProviderErrorKind::Network,
            ..
        }
    ));
}

#[test]
fn env_vars_select_and_configure_the_http_provider() {
    let api = Arc::new(FakeApi::default());
    let addr = spawn_api(api);
    std::env::set_var(
        ENV_LLM_ENDPOINT,
        format!("http://{addr}/v1/chat/completions"),
    );
    std::env::set_var(ENV_LLM_MODEL, "env-model");
    std::env::set_var(ENV_LLM_API_KEY, "env-key");
    std::env::remove_var(ENV_EMBED_ENDPOINT);

    let cfg = ProvidersConfig {
        llm: LlmProviderConfig {
            kind: ProviderKind::Http,
            ..Default::default()
        },
        embedding: EmbeddingProviderConfig::default(),
        ..Default::default()
    };
    let providers = Providers::from_config(&cfg, no_backoff()).unwrap();
    let resp = providers
        .query_llm
        .complete(&ChatRequest::new("t", "from env".into(), 16))
        .unwrap();
    assert!(resp.text.starts_with("echo:from env"));

    std::env::remove_var(ENV_LLM_ENDPOINT);
    std::env::remove_var(ENV_LLM_MODEL);
    std::env::remove_var(ENV_LLM_API_KEY);
}
