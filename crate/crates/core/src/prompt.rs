//! Prompt rendering for generation and evaluation.
//!
//! Template and query texts are plain-text assets under `assets/`; the few-shot
//! bank is `assets/fewshot.jsonl`. Rendering is a pure function of its inputs.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parse::{parse_evaluation_output, ExtractionPath};
use crate::schema::{BiasTag, Category, CategoryKind, UnknownName, WscInstance};

/// Prompting strategy. `Nt` has no preamble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    Nt,
    Cot,
    ScCot,
    Coe,
    Tot,
    Toe,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 6] = [
        TemplateKind::Nt,
        TemplateKind::Cot,
        TemplateKind::ScCot,
        TemplateKind::Coe,
        TemplateKind::Tot,
        TemplateKind::Toe,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateKind::Nt => "nt",
            TemplateKind::Cot => "cot",
            TemplateKind::ScCot => "sc_cot",
            TemplateKind::Coe => "coe",
            TemplateKind::Tot => "tot",
            TemplateKind::Toe => "toe",
        }
    }

    /// Completions requested per evaluation item.
    pub fn samples(self) -> usize {
        if self == TemplateKind::ScCot {
            3
        } else {
            1
        }
    }
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateKind {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', '+'], "_");
        TemplateKind::ALL
            .into_iter()
            .find(|k| k.as_str() == norm)
            .ok_or_else(|| UnknownName(s.to_string()))
    }
}

/// Generation query. `Wdq` references the Winograd format explicitly, `Wiq`
/// describes the same task without naming it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QueryKind {
    Wdq,
    Wiq,
    Ambiguous,
    Offensive(BiasTag),
}

impl QueryKind {
    /// Bias tags that ship with a query text.
    pub const OFFENSIVE_TAGS: [BiasTag; 5] = [
        BiasTag::Race,
        BiasTag::Religion,
        BiasTag::Sex,
        BiasTag::Appearance,
        BiasTag::Socioeconomic,
    ];

    /// The category of instances this query asks for.
    pub fn category(self) -> Category {
        match self {
            QueryKind::Wdq | QueryKind::Wiq => Category::Traditional,
            QueryKind::Ambiguous => Category::Ambiguous,
            QueryKind::Offensive(tag) => Category::Offensive(tag),
        }
    }

    /// Default query for evaluating an instance of `category`.
    pub fn for_category(category: Category) -> QueryKind {
        match category {
            Category::Traditional => QueryKind::Wdq,
            Category::Ambiguous => QueryKind::Ambiguous,
            Category::Offensive(tag) => QueryKind::Offensive(tag),
        }
    }

    pub fn is_offensive(self) -> bool {
        matches!(self, QueryKind::Offensive(_))
    }

    /// Every query kind with a shipped text.
    pub fn all_supported() -> Vec<QueryKind> {
        let mut out = vec![QueryKind::Wdq, QueryKind::Wiq, QueryKind::Ambiguous];
        out.extend(Self::OFFENSIVE_TAGS.map(QueryKind::Offensive));
        out
    }
}

impl fmt::Display for QueryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QueryKind::Wdq => f.write_str("wdq"),
            QueryKind::Wiq => f.write_str("wiq"),
            QueryKind::Ambiguous => f.write_str("ambiguous"),
            QueryKind::Offensive(tag) => write!(f, "offensive:{tag}"),
        }
    }
}

impl FromStr for QueryKind {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase();
        match norm.as_str() {
            "wdq" => Ok(QueryKind::Wdq),
            "wiq" => Ok(QueryKind::Wiq),
            "ambiguous" => Ok(QueryKind::Ambiguous),
            other => match other.split_once(':') {
                Some(("offensive", tag)) => tag.parse().map(QueryKind::Offensive),
                _ => Err(UnknownName(s.to_string())),
            },
        }
    }
}

impl Serialize for QueryKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for QueryKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Generation,
    Evaluation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ShotRepr", into = "ShotRepr")]
pub struct FewShotExample {
    pub id: String,
    pub text: String,
    pub category: Category,
    pub query_compat: Vec<QueryKind>,
    pub role: Role,
}

#[derive(Serialize, Deserialize)]
struct ShotRepr {
    id: String,
    role: Role,
    category: CategoryKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bias_tag: Option<BiasTag>,
    query_compat: Vec<QueryKind>,
    text: String,
}

impl TryFrom<ShotRepr> for FewShotExample {
    type Error = String;

    fn try_from(r: ShotRepr) -> Result<Self, Self::Error> {
        let category = match (r.category, r.bias_tag) {
            (CategoryKind::Traditional, None) => Category::Traditional,
            (CategoryKind::Ambiguous, None) => Category::Ambiguous,
            (CategoryKind::Offensive, Some(t)) => Category::Offensive(t),
            _ => return Err(format!("shot `{}`: bias_tag must accompany offensive category", r.id)),
        };
        Ok(FewShotExample {
            id: r.id,
            text: r.text,
            category,
            query_compat: r.query_compat,
            role: r.role,
        })
    }
}

impl From<FewShotExample> for ShotRepr {
    fn from(e: FewShotExample) -> Self {
        ShotRepr {
            id: e.id,
            role: e.role,
            category: e.category.kind(),
            bias_tag: e.category.bias_tag(),
            query_compat: e.query_compat,
            text: e.text,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("shot `{id}` is not compatible with query {query}")]
    IncompatibleShots { id: String, query: QueryKind },
    #[error("shot `{id}` has role {found:?}, expected {expected:?}")]
    WrongRole { id: String, found: Role, expected: Role },
    #[error("{0} shots given, at most 3 are allowed for evaluation")]
    TooManyShots(usize),
    #[error("batch size must be at least 1")]
    ZeroBatch,
    #[error("no query text ships for bias tag `{0}`")]
    UnsupportedBiasTag(BiasTag),
    #[error("few-shot bank line {line}: {message}")]
    Bank { line: usize, message: String },
}

pub const MAX_EVAL_SHOTS: usize = 3;

pub fn template_text(kind: TemplateKind, role: Role) -> &'static str {
    use TemplateKind::*;
    match (role, kind) {
        (_, Nt) => "",
        (Role::Generation, Cot) => include_str!("../assets/templates/generation/cot.txt"),
        (Role::Generation, ScCot) => include_str!("../assets/templates/generation/sc_cot.txt"),
        (Role::Generation, Coe) => include_str!("../assets/templates/generation/coe.txt"),
        (Role::Generation, Tot) => include_str!("../assets/templates/generation/tot.txt"),
        (Role::Generation, Toe) => include_str!("../assets/templates/generation/toe.txt"),
        (Role::Evaluation, Cot) => include_str!("../assets/templates/evaluation/cot.txt"),
        (Role::Evaluation, ScCot) => include_str!("../assets/templates/evaluation/sc_cot.txt"),
        (Role::Evaluation, Coe) => include_str!("../assets/templates/evaluation/coe.txt"),
        (Role::Evaluation, Tot) => include_str!("../assets/templates/evaluation/tot.txt"),
        (Role::Evaluation, Toe) => include_str!("../assets/templates/evaluation/toe.txt"),
    }
}

pub fn query_text(query: QueryKind) -> Result<&'static str, PromptError> {
    Ok(match query {
        QueryKind::Wdq => include_str!("../assets/queries/wdq.txt"),
        QueryKind::Wiq => include_str!("../assets/queries/wiq.txt"),
        QueryKind::Ambiguous => include_str!("../assets/queries/ambiguous.txt"),
        QueryKind::Offensive(BiasTag::Race) => include_str!("../assets/queries/offensive_race.txt"),
        QueryKind::Offensive(BiasTag::Religion) => {
            include_str!("../assets/queries/offensive_religion.txt")
        }
        QueryKind::Offensive(BiasTag::Sex) => include_str!("../assets/queries/offensive_sex.txt"),
        QueryKind::Offensive(BiasTag::Appearance) => {
            include_str!("../assets/queries/offensive_appearance.txt")
        }
        QueryKind::Offensive(BiasTag::Socioeconomic) => {
            include_str!("../assets/queries/offensive_socioeconomic.txt")
        }
        QueryKind::Offensive(tag) => return Err(PromptError::UnsupportedBiasTag(tag)),
    })
}

const BANK: &str = include_str!("../assets/fewshot.jsonl");

/// The shipped few-shot bank.
pub fn default_bank() -> Vec<FewShotExample> {
    parse_bank(BANK).expect("shipped few-shot bank is well formed")
}

pub fn load_bank(path: &Path) -> Result<Vec<FewShotExample>, PromptError> {
    let text = std::fs::read_to_string(path).map_err(|e| PromptError::Bank {
        line: 0,
        message: format!("{}: {e}", path.display()),
    })?;
    parse_bank(&text)
}

/// Parses a JSONL bank. Evaluation entries must end with an answer line the
/// strict evaluation parser accepts.
pub fn parse_bank(text: &str) -> Result<Vec<FewShotExample>, PromptError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bank_err = |message: String| PromptError::Bank {
            line: i + 1,
            message,
        };
        let ex: FewShotExample = serde_json::from_str(line).map_err(|e| bank_err(e.to_string()))?;
        if ex.role == Role::Evaluation {
            let last = ex.text.lines().last().unwrap_or("");
            match parse_evaluation_output(last) {
                Some(p) if p.extraction_path == ExtractionPath::Strict => {}
                _ => return Err(bank_err(format!("evaluation shot `{}` lacks a worked answer", ex.id))),
            }
        }
        out.push(ex);
    }
    Ok(out)
}

/// Bank entries matching `(category, query, role)` in file order. Evaluation
/// selections are capped at three.
pub fn select_shots(
    category: Category,
    query: QueryKind,
    role: Role,
    bank: &[FewShotExample],
) -> Vec<FewShotExample> {
    let mut out: Vec<FewShotExample> = bank
        .iter()
        .filter(|e| e.role == role && e.category == category && e.query_compat.contains(&query))
        .cloned()
        .collect();
    if out.is_empty() && !bank.is_empty() {
        tracing::warn!(%category, %query, ?role, "no matching few-shot examples, using zero-shot");
    }
    if role == Role::Evaluation {
        out.truncate(MAX_EVAL_SHOTS);
    }
    out
}

/// Fully assembled prompt, kept in parts so the pieces can be audited.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub template_text: String,
    pub query_text: String,
    pub shots: Vec<FewShotExample>,
    pub task_text: String,
    pub batch_size: Option<usize>,
}

impl PromptBundle {
    pub fn render(&self) -> String {
        [self.template_text.as_str(), self.query_text.as_str(), self.task_text.as_str()]
            .into_iter()
            .map(str::trim_end)
            .filter(|p| !p.is_empty())
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

/// Output format instruction appended to every generation prompt.
pub fn generation_task_text(batch_size: usize) -> String {
    let noun = if batch_size == 1 { "pair" } else { "pairs" };
    format!(
        "Produce exactly {batch_size} new {noun}. Write each pair as one block of seven lines and leave a blank line between blocks:\n\
         SENTENCE1: <the first sentence>\n\
         SENTENCE2: <the second sentence>\n\
         PRONOUN: <the target pronoun>\n\
         OPTION_A: <the first candidate, exactly as written in the sentences>\n\
         OPTION_B: <the second candidate, exactly as written in the sentences>\n\
         ANSWER1: <A1, A2 or neither for the first sentence>\n\
         ANSWER2: <A1, A2 or neither for the second sentence>\n\
         Do not write anything else inside a block."
    )
}

fn is_anchor(line: &str) -> bool {
    let t = line.trim();
    t.starts_with("<Insert") && t.ends_with('>')
}

/// Replaces the query's `<Insert … examples>` line with the numbered shots,
/// or removes it when there are none.
fn splice_shots(query: &str, shots: &[FewShotExample]) -> String {
    let lines: Vec<&str> = query.trim_end().lines().collect();
    let mut out: Vec<String> = Vec::with_capacity(lines.len() + shots.len());
    let mut skip_blank = false;
    for (i, line) in lines.iter().enumerate() {
        if skip_blank {
            skip_blank = false;
            if line.trim().is_empty() {
                continue;
            }
        }
        if !is_anchor(line) {
            out.push(line.to_string());
            continue;
        }
        if shots.is_empty() {
            let prev_blank = i > 0 && lines[i - 1].trim().is_empty();
            skip_blank = prev_blank;
            continue;
        }
        for (k, s) in shots.iter().enumerate() {
            out.push(format!("Example {}: {}", k + 1, s.text));
        }
    }
    out.join("\n")
}

pub fn build_generation_bundle(
    template: TemplateKind,
    query: QueryKind,
    batch_size: usize,
    shots: &[FewShotExample],
) -> Result<PromptBundle, PromptError> {
    if batch_size == 0 {
        return Err(PromptError::ZeroBatch);
    }
    for s in shots {
        if s.role != Role::Generation {
            return Err(PromptError::WrongRole {
                id: s.id.clone(),
                found: s.role,
                expected: Role::Generation,
            });
        }
        if !s.query_compat.contains(&query) {
            return Err(PromptError::IncompatibleShots {
                id: s.id.clone(),
                query,
            });
        }
    }
    Ok(PromptBundle {
        template_text: template_text(template, Role::Generation).to_string(),
        query_text: splice_shots(query_text(query)?, shots),
        shots: shots.to_vec(),
        task_text: generation_task_text(batch_size),
        batch_size: Some(batch_size),
    })
}

pub fn render_generation_prompt(
    template: TemplateKind,
    query: QueryKind,
    batch_size: usize,
    shots: &[FewShotExample],
) -> Result<String, PromptError> {
    build_generation_bundle(template, query, batch_size, shots).map(|b| b.render())
}

/// The part of `sentence` from the first whole-word occurrence of `pronoun` up
/// to the next sentence-ending mark, without that mark.
pub fn clause_for(sentence: &str, pronoun: &str) -> String {
    let strip = |s: &str| s.trim().trim_end_matches(['.', '!', '?', ';']).trim().to_string();
    let words: Vec<String> = pronoun.split_whitespace().map(regex::escape).collect();
    if words.is_empty() {
        return strip(sentence);
    }
    let pattern = format!(r"(?i)\b{}\b", words.join(r"\s+"));
    let Ok(re) = Regex::new(&pattern) else {
        return strip(sentence);
    };
    match re.find(sentence) {
        Some(m) => {
            let rest = &sentence[m.start()..];
            let end = rest
                .find(['.', '!', '?', ';'])
                .unwrap_or(rest.len());
            strip(&rest[..end])
        }
        None => strip(sentence),
    }
}

pub fn evaluation_question(inst: &WscInstance) -> String {
    format!(
        "What does `{}' refer to in `{}' from `{}'? Options: [`{}', `{}'].",
        inst.pronoun,
        clause_for(&inst.sentence, &inst.pronoun),
        inst.sentence.trim(),
        inst.candidate_a,
        inst.candidate_b
    )
}

pub fn build_evaluation_bundle(
    template: TemplateKind,
    inst: &WscInstance,
    shots: &[FewShotExample],
) -> Result<PromptBundle, PromptError> {
    if shots.len() > MAX_EVAL_SHOTS {
        return Err(PromptError::TooManyShots(shots.len()));
    }
    if let Some(s) = shots.iter().find(|s| s.role != Role::Evaluation) {
        return Err(PromptError::WrongRole {
            id: s.id.clone(),
            found: s.role,
            expected: Role::Evaluation,
        });
    }
    Ok(PromptBundle {
        template_text: template_text(template, Role::Evaluation).to_string(),
        query_text: shots
            .iter()
            .map(|s| s.text.trim())
            .collect::<Vec<_>>()
            .join("\n\n"),
        shots: shots.to_vec(),
        task_text: evaluation_question(inst),
        batch_size: None,
    })
}

pub fn render_evaluation_prompt(
    template: TemplateKind,
    inst: &WscInstance,
    shots: &[FewShotExample],
) -> Result<String, PromptError> {
    build_evaluation_bundle(template, inst, shots).map(|b| b.render())
}
