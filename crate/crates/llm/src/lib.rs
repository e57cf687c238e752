//! Uniform chat-completion interface over remote providers, plus a scripted
//! mock for tests and reproducible pipeline runs.
//!
//! A [`Backend`] wraps a single-attempt [`Transport`] and adds the retry
//! policy, a concurrency bound shared by every caller of the handle, an
//! optional token-bucket rate limiter and an append-only JSONL transcript.

mod backend;
mod config;
mod http;
mod mock;
mod transcript;

pub use backend::{Backend, ErrorRecord};
pub use config::{BackendConfig, Dialect, RetryPolicy};
pub use http::HttpTransport;
pub use mock::{mock_script, prompt_hash, Matcher, MockScript, MockTransport, ScriptRule};
pub use transcript::{Transcript, TranscriptEntry};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Opaque tag carried into logs and error records.
    pub request_tag: String,
}

impl ChatRequest {
    pub fn new(model_id: impl Into<String>, prompt: impl Into<String>) -> Self {
        ChatRequest {
            model_id: model_id.into(),
            prompt: prompt.into(),
            temperature: 0.0,
            max_tokens: 1024,
            request_tag: String::new(),
        }
    }

    pub fn temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn max_tokens(mut self, n: u32) -> Self {
        self.max_tokens = n;
        self
    }

    pub fn tag(mut self, tag: impl Into<String>) -> Self {
        self.request_tag = tag.into();
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.prompt.trim().is_empty() {
            return Err(BackendError::InvalidRequest("empty prompt".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(BackendError::InvalidRequest(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    /// Provider text, verbatim. Refusals are returned as-is.
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
    pub provider: String,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited (retry after {retry_after_ms:?} ms)")]
    RateLimited { retry_after_ms: Option<u64> },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("provider returned {status}: {body}")]
    Provider { status: u16, body: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("configuration error: {0}")]
    Config(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            BackendError::Transport(_) | BackendError::RateLimited { .. }
        )
    }

    /// Short stable code for logs and error records.
    pub fn code(&self) -> &'static str {
        match self {
            BackendError::Transport(_) => "transport",
            BackendError::RateLimited { .. } => "rate_limited",
            BackendError::Auth(_) => "auth",
            BackendError::Provider { .. } => "provider",
            BackendError::InvalidRequest(_) => "invalid_request",
            BackendError::Config(_) => "config",
        }
    }
}

/// One request/response exchange with a provider, no retries.
#[async_trait]
pub trait Transport: Send + Sync {
    async fn send(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError>;

    fn provider(&self) -> &str;
}
