use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::BackendError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dialect {
    /// `POST .../chat/completions` with `messages` and `choices[0].message`.
    #[serde(rename = "openai")]
    OpenAi,
    /// `POST .../messages` with `x-api-key` and `content[].text`.
    Anthropic,
    Mock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_backoff_ms: 500,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt + 1`, given the delay used before the
    /// previous attempt and an optional server hint. Never shorter than the
    /// previous delay.
    pub fn next_delay(&self, attempt: u32, previous: Duration, hint_ms: Option<u64>) -> Duration {
        let exp = attempt.saturating_sub(1).min(20);
        let base = self.base_backoff_ms.saturating_mul(1u64 << exp);
        let wanted = base.max(hint_ms.unwrap_or(0));
        Duration::from_millis(wanted).max(previous)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub endpoint: String,
    pub dialect: Dialect,
    /// Environment variable holding the API key, e.g. `WINOFORGE_API_KEY_OPENAI`.
    pub auth_env_var: Option<String>,
    pub max_concurrency: usize,
    pub retry: RetryPolicy,
    pub request_timeout_ms: u64,
    /// Token-bucket refill rate; `None` disables rate limiting.
    pub requests_per_second: Option<f64>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            dialect: Dialect::OpenAi,
            auth_env_var: None,
            max_concurrency: 4,
            retry: RetryPolicy::default(),
            request_timeout_ms: 120_000,
            requests_per_second: None,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.max_concurrency == 0 {
            return Err(BackendError::Config("max_concurrency must be >= 1".into()));
        }
        if self.retry.max_attempts == 0 {
            return Err(BackendError::Config("retry.max_attempts must be >= 1".into()));
        }
        if let Some(rps) = self.requests_per_second {
            if rps.is_nan() || rps <= 0.0 {
                return Err(BackendError::Config("requests_per_second must be > 0".into()));
            }
        }
        Ok(())
    }

    /// `WINOFORGE_API_KEY_<PROVIDER>` unless overridden.
    pub fn auth_var(&self) -> String {
        if let Some(v) = &self.auth_env_var {
            return v.clone();
        }
        let provider = match self.dialect {
            Dialect::OpenAi => "OPENAI",
            Dialect::Anthropic => "ANTHROPIC",
            Dialect::Mock => "MOCK",
        };
        format!("WINOFORGE_API_KEY_{provider}")
    }
}
