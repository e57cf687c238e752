use std::path::Path;
use std::sync::Mutex;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{BackendError, ChatRequest, ChatResponse, Transport};

/// How a script rule selects prompts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "match", rename_all = "snake_case")]
pub enum Matcher {
    /// Matches every prompt (`"*"` in hand-written scripts).
    Any,
    /// Hex SHA-256 of the full prompt text, see [`prompt_hash`].
    PromptHash { sha256: String },
    Substring { pattern: String },
    /// Matches exactly once; sequential rules are consumed in script order.
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(flatten)]
    pub matcher: Matcher,
    pub response: String,
}

impl ScriptRule {
    pub fn new(matcher: Matcher, response: impl Into<String>) -> Self {
        ScriptRule {
            matcher,
            response: response.into(),
        }
    }
}

/// On-disk mock script (`--mock-script`), JSON.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub rules: Vec<ScriptRule>,
}

impl MockScript {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))
    }

    pub fn into_transport(self) -> MockTransport {
        mock_script(self.rules, self.seed)
    }
}

pub fn prompt_hash(prompt: &str) -> String {
    let digest = Sha256::digest(prompt.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Deterministic backend: first matching rule wins; unmatched prompts get a
/// filler answer derived from `(seed, model, prompt)` only.
#[derive(Debug)]
pub struct MockTransport {
    seed: u64,
    rules: Mutex<Vec<(ScriptRule, bool)>>,
}

pub fn mock_script(entries: Vec<ScriptRule>, seed: u64) -> MockTransport {
    MockTransport {
        seed,
        rules: Mutex::new(entries.into_iter().map(|r| (r, false)).collect()),
    }
}

impl MockTransport {
    fn answer(&self, model_id: &str, prompt: &str) -> String {
        let mut rules = self.rules.lock().unwrap_or_else(|e| e.into_inner());
        let mut hash = None;
        for (rule, used) in rules.iter_mut() {
            let hit = match &rule.matcher {
                Matcher::Any => true,
                Matcher::Substring { pattern } => prompt.contains(pattern.as_str()),
                Matcher::PromptHash { sha256 } => {
                    let h = hash.get_or_insert_with(|| prompt_hash(prompt));
                    h.eq_ignore_ascii_case(sha256)
                }
                Matcher::Sequential => !*used,
            };
            if hit {
                if rule.matcher == Matcher::Sequential {
                    *used = true;
                }
                return rule.response.clone();
            }
        }
        self.filler(model_id, prompt)
    }

    fn filler(&self, model_id: &str, prompt: &str) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(model_id.as_bytes());
        hasher.update([0u8]);
        hasher.update(prompt.as_bytes());
        let digest = hasher.finalize();
        let label = digest[0] % 3;
        let tail: String = digest[1..5].iter().map(|b| format!("{b:02x}")).collect();
        format!("{label}; scripted filler {tail}")
    }
}

#[async_trait]
impl Transport for MockTransport {
    async fn send(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let text = self.answer(&req.model_id, &req.prompt);
        Ok(ChatResponse {
            prompt_tokens: req.prompt.split_whitespace().count() as u64,
            completion_tokens: text.split_whitespace().count() as u64,
            text,
            latency_ms: 0,
            provider: "mock".into(),
        })
    }

    fn provider(&self) -> &str {
        "mock"
    }
}
