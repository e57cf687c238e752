//! Provider adapters for the two supported wire dialects.

use std::time::{Duration, Instant};

use async_trait::async_trait;
use reqwest::header::{HeaderMap, RETRY_AFTER};
use reqwest::StatusCode;
use serde_json::{json, Value};

use crate::config::{BackendConfig, Dialect};
use crate::{BackendError, ChatRequest, ChatResponse, Transport};

const ANTHROPIC_VERSION: &str = "2023-06-01";

pub struct HttpTransport {
    dialect: Dialect,
    endpoint: String,
    api_key: Option<String>,
    auth_var: String,
    client: reqwest::Client,
    provider: String,
}

impl HttpTransport {
    /// Reads the API key from the configured environment variable. A missing
    /// key is reported as [`BackendError::Auth`] on the first request rather
    /// than here, so that dry runs can still build the handle.
    pub fn from_config(cfg: &BackendConfig) -> Result<Self, BackendError> {
        let auth_var = cfg.auth_var();
        let api_key = std::env::var(&auth_var).ok().filter(|k| !k.is_empty());
        Self::with_key(cfg, api_key, auth_var)
    }

    pub fn with_key(
        cfg: &BackendConfig,
        api_key: Option<String>,
        auth_var: String,
    ) -> Result<Self, BackendError> {
        let provider = match cfg.dialect {
            Dialect::OpenAi => "openai",
            Dialect::Anthropic => "anthropic",
            Dialect::Mock => {
                return Err(BackendError::Config(
                    "mock dialect has no HTTP transport".into(),
                ))
            }
        };
        let client = reqwest::Client::builder()
            .timeout(Duration::from_millis(cfg.request_timeout_ms))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(HttpTransport {
            dialect: cfg.dialect,
            endpoint: cfg.endpoint.clone(),
            api_key,
            auth_var,
            client,
            provider: provider.into(),
        })
    }

    /// Both dialects accept the same minimal body for a single user turn.
    fn body(&self, req: &ChatRequest) -> Value {
        json!({
            "model": req.model_id,
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
            "messages": [{ "role": "user", "content": req.prompt }],
        })
    }

    fn extract(&self, v: &Value) -> Result<(String, u64, u64), BackendError> {
        let malformed = || BackendError::Provider {
            status: 200,
            body: format!("unexpected response shape: {v}"),
        };
        match self.dialect {
            Dialect::Anthropic => {
                let text = v["content"]
                    .as_array()
                    .ok_or_else(malformed)?
                    .iter()
                    .filter(|b| b["type"] == "text")
                    .filter_map(|b| b["text"].as_str())
                    .collect::<String>();
                let usage = &v["usage"];
                Ok((
                    text,
                    usage["input_tokens"].as_u64().unwrap_or(0),
                    usage["output_tokens"].as_u64().unwrap_or(0),
                ))
            }
            _ => {
                let text = v["choices"][0]["message"]["content"]
                    .as_str()
                    .ok_or_else(malformed)?
                    .to_string();
                let usage = &v["usage"];
                Ok((
                    text,
                    usage["prompt_tokens"].as_u64().unwrap_or(0),
                    usage["completion_tokens"].as_u64().unwrap_or(0),
                ))
            }
        }
    }
}

fn retry_after_ms(headers: &HeaderMap) -> Option<u64> {
    let raw = headers.get(RETRY_AFTER)?.to_str().ok()?;
    raw.trim()
        .parse::<f64>()
        .ok()
        .filter(|s| *s >= 0.0)
        .map(|secs| (secs * 1000.0) as u64)
}

#[async_trait]
impl Transport for HttpTransport {
    async fn send(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let key = self
            .api_key
            .as_deref()
            .ok_or_else(|| BackendError::Auth(format!("environment variable {} is not set", self.auth_var)))?;
        let mut builder = self.client.post(&self.endpoint).json(&self.body(req));
        builder = match self.dialect {
            Dialect::Anthropic => builder
                .header("x-api-key", key)
                .header("anthropic-version", ANTHROPIC_VERSION),
            _ => builder.bearer_auth(key),
        };
        let started = Instant::now();
        let resp = builder
            .send()
            .await
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        let hint = retry_after_ms(resp.headers());
        let body = resp
            .text()
            .await
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        match status {
            s if s.is_success() => {}
            StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN => {
                return Err(BackendError::Auth(body))
            }
            StatusCode::TOO_MANY_REQUESTS => {
                return Err(BackendError::RateLimited {
                    retry_after_ms: hint,
                })
            }
            s if s.is_server_error() => {
                return Err(BackendError::Transport(format!("{s}: {body}")))
            }
            s => {
                return Err(BackendError::Provider {
                    status: s.as_u16(),
                    body,
                })
            }
        }
        let v: Value = serde_json::from_str(&body).map_err(|e| BackendError::Provider {
            status: status.as_u16(),
            body: format!("invalid JSON ({e}): {body}"),
        })?;
        let (text, prompt_tokens, completion_tokens) = self.extract(&v)?;
        Ok(ChatResponse {
            text,
            prompt_tokens,
            completion_tokens,
            latency_ms: started.elapsed().as_millis() as u64,
            provider: self.provider.clone(),
        })
    }

    fn provider(&self) -> &str {
        &self.provider
    }
}
