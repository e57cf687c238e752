//! TOML configuration. Every field is optional; flags override the file and
//! the file overrides built-in defaults.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;
use winoforge_llm::{Backend, BackendConfig, MockScript};

use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub mock_script: Option<PathBuf>,
    pub backend: Option<BackendConfig>,
    pub generate: GenerateSection,
    pub split: SplitSection,
    pub evaluate: EvaluateSection,
    pub annotate: AnnotateSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    pub model: Option<String>,
    pub template: Option<String>,
    pub query: Option<String>,
    pub batch_size: Option<usize>,
    pub batches: Option<usize>,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub enable_offensive: Option<bool>,
    pub bank: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub test: Option<usize>,
    pub val: Option<usize>,
    pub fewshot: Option<usize>,
    pub stratify: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub models: Vec<String>,
    pub template: Option<String>,
    pub shots: Option<String>,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub chunk_size: Option<usize>,
    pub exclude_unparseable: Option<bool>,
    pub enable_offensive: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotateSection {
    pub port: Option<u16>,
    pub required_raters: Option<usize>,
    pub annotators: Vec<String>,
    pub lease_minutes: Option<i64>,
    pub ui_dir: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<FileConfig, CliError> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Flag, then file, then default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// A boolean switch can only turn a setting on.
pub fn switch(flag: bool, file: Option<bool>) -> bool {
    flag || file.unwrap_or(false)
}

pub fn parse_name<T: std::str::FromStr>(what: &str, raw: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    raw.parse()
        .map_err(|e| CliError::Config(format!("invalid {what} `{raw}`: {e}")))
}

/// Settings shared by every command after merging.
pub struct Resolved {
    pub file: FileConfig,
    pub seed: Option<u64>,
    pub mock_script: Option<PathBuf>,
}

impl Resolved {
    pub fn new(global: &crate::args::GlobalArgs) -> Result<Resolved, CliError> {
        let file = FileConfig::load(global.config.as_deref())?;
        let seed = global.seed.or(file.seed);
        let mock_script = global.mock_script.clone().or_else(|| file.mock_script.clone());
        Ok(Resolved { file, seed, mock_script })
    }

    /// Timestamps are pinned under a mock backend so outputs replay exactly.
    pub fn deterministic(&self) -> bool {
        self.mock_script.is_some()
    }

    pub fn backend(&self, transcript: Option<&Path>) -> Result<Backend, CliError> {
        let cfg = self.file.backend.clone().unwrap_or_default();
        let backend = match &self.mock_script {
            Some(path) => {
                let mut script = MockScript::load(path).map_err(|e| CliError::Config(e.to_string()))?;
                if let Some(seed) = self.seed {
                    script.seed = seed;
                }
                Backend::new(Arc::new(script.into_transport()), cfg.max_concurrency, cfg.retry)
            }
            None => Backend::from_config(&cfg).map_err(|e| CliError::Config(e.to_string()))?,
        };
        match transcript {
            Some(p) => backend
                .with_transcript(p)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display()))),
            None => Ok(backend),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        assert_eq!(pick(Some(1), Some(2), 3), 1);
        assert_eq!(pick(None, Some(2), 3), 2);
        assert_eq!(pick(None, None, 3), 3);
        assert!(switch(true, Some(false)));
        assert!(switch(false, Some(true)));
        assert!(!switch(false, None));
    }

    #[test]
    fn full_file_parses() {
        let text = r#"
            seed = 5
            [backend]
            dialect = "anthropic"
            endpoint = "https://example.invalid/v1/messages"
            max_concurrency = 2
            [generate]
            model = "claude-2"
            template = "toe"
            batch_size = 3
            [split]
            test = 10
            [evaluate]
            models = ["a", "b"]
            shots = "zero"
            [annotate]
            required_raters = 2
            annotators = ["x", "y"]
        "#;
        let cfg: FileConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.seed, Some(5));
        assert_eq!(cfg.backend.unwrap().max_concurrency, 2);
        assert_eq!(cfg.evaluate.models, vec!["a", "b"]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("[generate]\nbatchsize = 3\n").is_err());
    }
}
