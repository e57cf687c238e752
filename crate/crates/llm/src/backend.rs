use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tokio::sync::{Mutex, Semaphore};
use tracing::{debug, warn};

use crate::config::{BackendConfig, Dialect, RetryPolicy};
use crate::http::HttpTransport;
use crate::transcript::Transcript;
use crate::{BackendError, ChatRequest, ChatResponse, Transport};

/// Per-item failure from [`Backend::complete_many`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub request_tag: String,
    pub kind: String,
    pub message: String,
    pub attempts: u32,
}

/// Shareable handle: clones share the concurrency bound, rate limiter and
/// transcript.
#[derive(Clone)]
pub struct Backend {
    inner: Arc<Inner>,
}

struct Inner {
    transport: Arc<dyn Transport>,
    retry: RetryPolicy,
    permits: Semaphore,
    max_concurrency: usize,
    bucket: Option<TokenBucket>,
    transcript: Option<Transcript>,
}

struct TokenBucket {
    rate: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    fn new(rate: f64) -> Self {
        let capacity = rate.max(1.0);
        TokenBucket {
            rate,
            capacity,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    async fn acquire(&self) {
        loop {
            let wait = {
                let mut st = self.state.lock().await;
                let now = Instant::now();
                let refill = now.duration_since(st.1).as_secs_f64() * self.rate;
                st.0 = (st.0 + refill).min(self.capacity);
                st.1 = now;
                if st.0 >= 1.0 {
                    st.0 -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - st.0) / self.rate)
            };
            tokio::time::sleep(wait).await;
        }
    }
}

impl Backend {
    pub fn new(transport: Arc<dyn Transport>, max_concurrency: usize, retry: RetryPolicy) -> Self {
        let max_concurrency = max_concurrency.max(1);
        Backend {
            inner: Arc::new(Inner {
                transport,
                retry,
                permits: Semaphore::new(max_concurrency),
                max_concurrency,
                bucket: None,
                transcript: None,
            }),
        }
    }

    /// Builds an HTTP-backed handle. The mock dialect cannot be built from a
    /// config alone; use [`crate::mock_script`] and [`Backend::new`].
    pub fn from_config(cfg: &BackendConfig) -> Result<Self, BackendError> {
        cfg.validate()?;
        let transport: Arc<dyn Transport> = match cfg.dialect {
            Dialect::OpenAi | Dialect::Anthropic => Arc::new(HttpTransport::from_config(cfg)?),
            Dialect::Mock => {
                return Err(BackendError::Config(
                    "mock dialect requires a mock script".into(),
                ))
            }
        };
        let mut backend = Backend::new(transport, cfg.max_concurrency, cfg.retry);
        if let Some(rps) = cfg.requests_per_second {
            backend = backend.with_rate_limit(rps);
        }
        Ok(backend)
    }

    /// Must be called before the handle is cloned.
    pub fn with_rate_limit(mut self, requests_per_second: f64) -> Self {
        if let Some(inner) = Arc::get_mut(&mut self.inner) {
            inner.bucket = Some(TokenBucket::new(requests_per_second));
        }
        self
    }

    /// Must be called before the handle is cloned.
    pub fn with_transcript(mut self, path: &Path) -> std::io::Result<Self> {
        let transcript = Transcript::open(path)?;
        if let Some(inner) = Arc::get_mut(&mut self.inner) {
            inner.transcript = Some(transcript);
        }
        Ok(self)
    }

    pub fn provider(&self) -> &str {
        self.inner.transport.provider()
    }

    pub fn max_concurrency(&self) -> usize {
        self.inner.max_concurrency
    }

    pub async fn complete(&self, req: ChatRequest) -> Result<ChatResponse, BackendError> {
        self.complete_counted(&req).await.map_err(|(e, _)| e)
    }

    async fn complete_counted(&self, req: &ChatRequest) -> Result<ChatResponse, (BackendError, u32)> {
        req.validate().map_err(|e| (e, 0))?;
        let _permit = self
            .inner
            .permits
            .acquire()
            .await
            .map_err(|_| (BackendError::Config("backend closed".into()), 0))?;
        let mut delay = Duration::ZERO;
        let mut attempt = 0;
        loop {
            attempt += 1;
            if let Some(bucket) = &self.inner.bucket {
                bucket.acquire().await;
            }
            let started = Instant::now();
            let outcome = self.inner.transport.send(req).await;
            let elapsed = started.elapsed().as_millis() as u64;
            if let Some(t) = &self.inner.transcript {
                if let Err(e) = t.record(req, &outcome, elapsed) {
                    warn!(error = %e, "failed to append transcript");
                }
            }
            match outcome {
                Ok(resp) => return Ok(resp),
                Err(e) if e.is_retryable() && attempt < self.inner.retry.max_attempts => {
                    let hint = match &e {
                        BackendError::RateLimited { retry_after_ms } => *retry_after_ms,
                        _ => None,
                    };
                    delay = self.inner.retry.next_delay(attempt, delay, hint);
                    debug!(tag = %req.request_tag, attempt, ?delay, error = %e, "retrying");
                    tokio::time::sleep(delay).await;
                }
                Err(e) => return Err((e, attempt)),
            }
        }
    }

    /// Results are positionally aligned with `reqs`. A failed item never
    /// aborts the rest of the batch.
    pub async fn complete_many(
        &self,
        reqs: Vec<ChatRequest>,
    ) -> Vec<Result<ChatResponse, ErrorRecord>> {
        let futs = reqs.iter().map(|req| async move {
            self.complete_counted(req)
                .await
                .map_err(|(e, attempts)| ErrorRecord {
                    request_tag: req.request_tag.clone(),
                    kind: e.code().to_string(),
                    message: e.to_string(),
                    attempts,
                })
        });
        futures::future::join_all(futs).await
    }
}
