use std::collections::{HashMap, HashSet};
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use winoforge_llm::{Backend, ChatRequest};

use super::{make_result, EvalResult, Prediction};
use crate::dataset::{write_jsonl_atomic, DatasetRecord, StoreError};
use crate::parse::RefusalLexicon;
use crate::prompt::{
    render_evaluation_prompt, select_shots, FewShotExample, PromptError, QueryKind, Role, TemplateKind,
};

/// Which few-shot examples accompany each evaluation question.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShotsPolicy {
    Zero,
    /// The bank's evaluation examples in file order: up to three, one for the
    /// tree templates.
    #[default]
    Bank,
    /// Only evaluation examples matching the instance category.
    ByCategory,
}

impl ShotsPolicy {
    fn limit(template: TemplateKind) -> usize {
        match template {
            TemplateKind::Tot | TemplateKind::Toe => 1,
            _ => 3,
        }
    }

    pub fn shots(self, template: TemplateKind, record: &DatasetRecord, bank: &[FewShotExample]) -> Vec<FewShotExample> {
        let mut shots = match self {
            ShotsPolicy::Zero => Vec::new(),
            ShotsPolicy::Bank => bank.iter().filter(|e| e.role == Role::Evaluation).cloned().collect(),
            ShotsPolicy::ByCategory => {
                let cat = record.instance.category;
                select_shots(cat, QueryKind::for_category(cat), Role::Evaluation, bank)
            }
        };
        shots.truncate(Self::limit(template));
        shots
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub model_id: String,
    pub template: TemplateKind,
    pub dataset_slice: String,
    pub shots_policy: ShotsPolicy,
    pub seed: u64,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl EvalRun {
    pub fn new(model_id: impl Into<String>, template: TemplateKind, dataset_slice: impl Into<String>) -> Self {
        EvalRun {
            model_id: model_id.into(),
            template,
            dataset_slice: dataset_slice.into(),
            shots_policy: ShotsPolicy::default(),
            seed: 0,
            temperature: 0.0,
            max_tokens: 1024,
        }
    }

    /// `model-template-slice-seed` with path-hostile characters replaced.
    pub fn run_id(&self) -> String {
        let raw = format!("{}-{}-{}-{}", self.model_id, self.template, self.dataset_slice, self.seed);
        raw.chars()
            .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub bank: Vec<FewShotExample>,
    pub lexicon: RefusalLexicon,
    /// Directory for `<run-id>.ckpt.jsonl`; no checkpointing when `None`.
    pub checkpoint_dir: Option<PathBuf>,
    /// Instances sent to the backend per checkpoint flush.
    pub chunk_size: usize,
    /// Stop after this many chunks; used to simulate interruption.
    pub max_chunks: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            bank: crate::prompt::default_bank(),
            lexicon: RefusalLexicon::default(),
            checkpoint_dir: None,
            chunk_size: 16,
            max_chunks: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dataset slice `{0}` is empty")]
    EmptySlice(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error(transparent)]
    Store(#[from] StoreError),
}

pub fn checkpoint_path(dir: &Path, run: &EvalRun) -> PathBuf {
    dir.join(format!("{}.ckpt.jsonl", run.run_id()))
}

/// Reads completed results. A torn final line (from a crash mid-write) is
/// dropped and the file rewritten without it.
fn read_checkpoint(path: &Path) -> Result<Vec<EvalResult>, EvalError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => {
            return Err(EvalError::Checkpoint {
                path: path.into(),
                message: e.to_string(),
            })
        }
    };
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let mut out = Vec::with_capacity(lines.len());
    let mut torn = false;
    for (i, line) in lines.iter().enumerate() {
        match serde_json::from_str::<EvalResult>(line) {
            Ok(r) => out.push(r),
            Err(_) if i + 1 == lines.len() => torn = true,
            Err(e) => {
                return Err(EvalError::Checkpoint {
                    path: path.into(),
                    message: format!("line {}: {e}", i + 1),
                })
            }
        }
    }
    if torn || !text.is_empty() && !text.ends_with('\n') {
        tracing::warn!(path = %path.display(), "dropping torn checkpoint tail");
        write_jsonl_atomic(path, &out)?;
    }
    Ok(out)
}

fn append_checkpoint(path: &Path, results: &[EvalResult]) -> Result<(), EvalError> {
    let err = |e: io::Error| EvalError::Checkpoint {
        path: path.into(),
        message: e.to_string(),
    };
    let mut buf = Vec::new();
    for r in results {
        serde_json::to_writer(&mut buf, r).map_err(|e| err(io::Error::other(e)))?;
        buf.push(b'\n');
    }
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(err)?;
    f.write_all(&buf).map_err(err)?;
    f.sync_data().map_err(err)
}

/// Evaluates every record in `dataset` and returns results in dataset order.
///
/// Completed instance ids found in the checkpoint are skipped, so an
/// interrupted run can be resumed. Backend failures become unparseable
/// results tagged with the error; only configuration problems abort.
pub async fn run_eval(
    run: &EvalRun,
    backend: &Backend,
    dataset: &[DatasetRecord],
    opts: &RunOptions,
) -> Result<Vec<EvalResult>, EvalError> {
    if dataset.is_empty() {
        return Err(EvalError::EmptySlice(run.dataset_slice.clone()));
    }
    let ckpt = match &opts.checkpoint_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| EvalError::Checkpoint {
                path: dir.clone(),
                message: e.to_string(),
            })?;
            Some(checkpoint_path(dir, run))
        }
        None => None,
    };
    let mut done: HashMap<String, EvalResult> = HashMap::new();
    if let Some(p) = &ckpt {
        for r in read_checkpoint(p)? {
            done.insert(r.instance_id.clone(), r);
        }
    }
    // render everything up front so prompt errors abort before any request
    let mut pending = Vec::new();
    for rec in dataset.iter().filter(|r| !done.contains_key(r.id())) {
        let shots = run.shots_policy.shots(run.template, rec, &opts.bank);
        let prompt = render_evaluation_prompt(run.template, &rec.instance, &shots)?;
        pending.push((rec, prompt));
    }

    let samples = run.template.samples();
    for (n_chunk, chunk) in pending.chunks(opts.chunk_size.max(1)).enumerate() {
        if opts.max_chunks.is_some_and(|m| n_chunk >= m) {
            break;
        }
        let mut reqs = Vec::with_capacity(chunk.len() * samples);
        for (rec, prompt) in chunk {
            for k in 0..samples {
                let tag = if samples > 1 {
                    format!("{}#vote{}", rec.id(), k + 1)
                } else {
                    rec.id().to_string()
                };
                reqs.push(
                    ChatRequest::new(&run.model_id, prompt.clone())
                        .temperature(run.temperature)
                        .max_tokens(run.max_tokens)
                        .tag(tag),
                );
            }
        }
        let responses = backend.complete_many(reqs).await;
        let mut fresh = Vec::with_capacity(chunk.len());
        for ((rec, _), outs) in chunk.iter().zip(responses.chunks(samples)) {
            let failure = outs.iter().find_map(|o| o.as_ref().err());
            let result = match failure {
                Some(e) => {
                    let mut r = make_result(&rec.instance, &run.model_id, run.template, Vec::new(), &opts.lexicon);
                    r.predicted = Prediction::Unparseable;
                    r.correct = false;
                    r.error_kind = super::classify_error(&rec.instance, Prediction::Unparseable);
                    r.issue = Some(format!("backend_error:{}: {}", e.kind, e.message));
                    r
                }
                None => {
                    let raw: Vec<String> = outs
                        .iter()
                        .map(|o| o.as_ref().map(|r| r.text.clone()).unwrap_or_default())
                        .collect();
                    make_result(&rec.instance, &run.model_id, run.template, raw, &opts.lexicon)
                }
            };
            fresh.push(result);
        }
        if let Some(p) = &ckpt {
            append_checkpoint(p, &fresh)?;
        }
        for r in fresh {
            done.insert(r.instance_id.clone(), r);
        }
    }

    let seen: HashSet<&str> = dataset.iter().map(|r| r.id()).collect();
    let mut out = Vec::with_capacity(dataset.len());
    for rec in dataset {
        if let Some(r) = done.remove(rec.id()) {
            out.push(r);
        }
    }
    let stale = done.keys().filter(|k| !seen.contains(k.as_str())).count();
    if stale > 0 {
        tracing::warn!(stale, "checkpoint holds results for instances outside this slice");
    }
    Ok(out)
}
