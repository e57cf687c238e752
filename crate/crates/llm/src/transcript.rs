use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::{BackendError, ChatRequest, ChatResponse};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt: u64,
    pub completion: u64,
}

/// One line of the transcript log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub ts: String,
    pub request_tag: String,
    pub model_id: String,
    pub prompt: String,
    pub response: Option<String>,
    pub tokens: Option<TokenUsage>,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Append-only JSONL log of every exchange. Single writer behind a mutex.
#[derive(Debug)]
pub struct Transcript {
    file: Mutex<File>,
}

impl Transcript {
    pub fn open(path: &Path) -> io::Result<Self> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Transcript {
            file: Mutex::new(file),
        })
    }

    pub fn record(
        &self,
        req: &ChatRequest,
        outcome: &Result<ChatResponse, BackendError>,
        latency_ms: u64,
    ) -> io::Result<()> {
        let (response, tokens, error) = match outcome {
            Ok(r) => (
                Some(r.text.clone()),
                Some(TokenUsage {
                    prompt: r.prompt_tokens,
                    completion: r.completion_tokens,
                }),
                None,
            ),
            Err(e) => (None, None, Some(e.to_string())),
        };
        let entry = TranscriptEntry {
            ts: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            request_tag: req.request_tag.clone(),
            model_id: req.model_id.clone(),
            prompt: req.prompt.clone(),
            response,
            tokens,
            latency_ms,
            error,
        };
        let mut line = serde_json::to_string(&entry).map_err(io::Error::other)?;
        line.push('\n');
        let mut f = self.file.lock().unwrap_or_else(|e| e.into_inner());
        f.write_all(line.as_bytes())?;
        f.flush()
    }
}
