//! Generation stage: render prompts, call the backend batch by batch, parse
//! the blocks into instances and attach structural verdicts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use winoforge_llm::{Backend, ChatRequest};

use crate::dataset::{dedup, DatasetRecord, PromptProvenance, ValiditySource};
use crate::parse::{parse_generation_output, ParseIssue, ParsedPairCandidate};
use crate::prompt::{
    render_generation_prompt, select_shots, FewShotExample, PromptError, QueryKind, Role, TemplateKind,
};
use crate::schema::{
    check_instance_structure, check_pair_structure, classify_validity, token_diff, Category, ValidityLabel,
    Violation, WscInstance, WscPair,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationPlan {
    pub model_id: String,
    pub template: TemplateKind,
    pub query: QueryKind,
    pub batch_size: usize,
    pub n_batches: usize,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl GenerationPlan {
    pub fn new(model_id: impl Into<String>, template: TemplateKind, query: QueryKind) -> Self {
        GenerationPlan {
            model_id: model_id.into(),
            template,
            query,
            batch_size: 3,
            n_batches: 1,
            temperature: 1.0,
            max_tokens: 2048,
        }
    }
}

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("batch size must be at least 1")]
    ZeroBatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchIssue {
    pub batch: usize,
    pub issue: ParseIssue,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchFailure {
    pub batch: usize,
    pub kind: String,
    pub message: String,
}

/// Label counts over generated units: a pair counts once, a standalone
/// instance counts once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValiditySummary {
    pub units: usize,
    pub counts: BTreeMap<ValidityLabel, usize>,
    pub fractions: BTreeMap<ValidityLabel, Option<f64>>,
}

pub fn validity_summary(records: &[DatasetRecord]) -> ValiditySummary {
    let mut units: BTreeMap<String, ValidityLabel> = BTreeMap::new();
    for r in records {
        let key = match &r.instance.pair_id {
            Some(p) => format!("pair:{p}"),
            None => format!("inst:{}", r.id()),
        };
        let label = r
            .validity
            .unwrap_or_else(|| classify_validity(&r.structural_violations));
        units
            .entry(key)
            .and_modify(|l| *l = (*l).max(label))
            .or_insert(label);
    }
    let mut counts: BTreeMap<ValidityLabel, usize> = ValidityLabel::ALL.iter().map(|l| (*l, 0)).collect();
    for l in units.values() {
        *counts.entry(*l).or_default() += 1;
    }
    let n = units.len();
    let fractions = counts
        .iter()
        .map(|(l, c)| (*l, (n > 0).then(|| *c as f64 / n as f64)))
        .collect();
    ValiditySummary { units: n, counts, fractions }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationOutcome {
    /// Deduplicated records in generation order.
    pub records: Vec<DatasetRecord>,
    pub duplicates_dropped: usize,
    pub issues: Vec<BatchIssue>,
    pub failures: Vec<BatchFailure>,
    pub summary: ValiditySummary,
}

pub fn slug(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

/// Pair rules plus the member-level category and candidate rules, each code
/// reported once.
pub fn pair_violations(pair: &WscPair) -> Vec<Violation> {
    let mut v = check_pair_structure(pair);
    for inst in [&pair.first, &pair.second] {
        for x in check_instance_structure(inst) {
            // member-level pronoun/candidate checks are already reported per member
            if matches!(x, Violation::MissingPronoun(_) | Violation::MissingCandidate(_)) {
                continue;
            }
            if !v.contains(&x) {
                v.push(x);
            }
        }
    }
    v
}

fn varying_words(first: &str, second: &str) -> (Option<String>, Option<String>) {
    let diff = token_diff(first, second);
    let join = |f: &dyn Fn(&crate::schema::DiffEntry) -> &str| {
        let words: Vec<&str> = diff.iter().map(f).filter(|w| !w.is_empty()).collect();
        (!words.is_empty()).then(|| words.join(" "))
    };
    (join(&|d| d.first.as_str()), join(&|d| d.second.as_str()))
}

/// Turns one parsed block into one or two records. Traditional and ambiguous
/// blocks become a pair; each offensive sentence stands alone.
pub fn candidate_records(
    c: &ParsedPairCandidate,
    category: Category,
    model_id: &str,
    base_id: &str,
    provenance: &PromptProvenance,
    created_at: chrono::DateTime<chrono::Utc>,
) -> Vec<DatasetRecord> {
    let paired = !matches!(category, Category::Offensive(_));
    let (w1, w2) = if paired { varying_words(&c.sentence1, &c.sentence2) } else { (None, None) };
    let make = |suffix: &str, sentence: &str, gold, special_word| WscInstance {
        id: format!("{base_id}-{suffix}"),
        sentence: sentence.to_string(),
        candidate_a: c.option_a.clone(),
        candidate_b: c.option_b.clone(),
        pronoun: c.pronoun.clone(),
        gold,
        category,
        generator_model: model_id.to_string(),
        pair_id: paired.then(|| base_id.to_string()),
        special_word,
    };
    let first = make("a", &c.sentence1, c.answer1, w1);
    let second = make("b", &c.sentence2, c.answer2, w2);
    let finish = |inst: WscInstance, violations: Vec<Violation>| {
        let mut r = DatasetRecord::new(inst, created_at);
        r.validity = Some(classify_validity(&violations));
        r.structural_violations = violations;
        r.validity_source = Some(ValiditySource::Structural);
        r.prompt_provenance = Some(provenance.clone());
        r
    };
    if paired {
        let pair = WscPair::new(first, second).expect("pair ids set above");
        let v = pair_violations(&pair);
        vec![finish(pair.first, v.clone()), finish(pair.second, v)]
    } else {
        [first, second]
            .into_iter()
            .map(|i| {
                let v = check_instance_structure(&i);
                finish(i, v)
            })
            .collect()
    }
}

/// Recomputes structural violations for every record, pairing records that
/// share a pair id. Validity is refreshed only where it did not come from
/// annotators.
pub fn assess(records: &mut [DatasetRecord]) {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        if let Some(p) = &r.instance.pair_id {
            groups.entry(p.clone()).or_default().push(i);
        }
    }
    let mut verdicts: Vec<Option<Vec<Violation>>> = vec![None; records.len()];
    for idx in groups.values().filter(|g| g.len() == 2) {
        let pair = WscPair::new(records[idx[0]].instance.clone(), records[idx[1]].instance.clone())
            .expect("grouped by pair id");
        let v = pair_violations(&pair);
        verdicts[idx[0]] = Some(v.clone());
        verdicts[idx[1]] = Some(v);
    }
    for (r, v) in records.iter_mut().zip(verdicts) {
        let v = v.unwrap_or_else(|| check_instance_structure(&r.instance));
        if r.validity_source != Some(ValiditySource::Annotation) {
            r.validity = Some(classify_validity(&v));
            r.validity_source = Some(ValiditySource::Structural);
        }
        r.structural_violations = v;
    }
}

/// Runs every batch of `plan` in order. Batch failures are recorded and
/// skipped; only prompt/config errors abort.
pub async fn run_generation(
    plan: &GenerationPlan,
    backend: &Backend,
    bank: &[FewShotExample],
    created_at: chrono::DateTime<chrono::Utc>,
) -> Result<GenerationOutcome, GenerateError> {
    if plan.batch_size == 0 {
        return Err(GenerateError::ZeroBatch);
    }
    let category = plan.query.category();
    let shots = select_shots(category, plan.query, Role::Generation, bank);
    let prompt = render_generation_prompt(plan.template, plan.query, plan.batch_size, &shots)?;
    let provenance = PromptProvenance {
        template: plan.template,
        query: plan.query,
        batch_size: plan.batch_size,
    };
    let prefix = format!("gen-{}-{}-{}", slug(&plan.model_id), plan.template, slug(&plan.query.to_string()));

    let mut records = Vec::new();
    let mut issues = Vec::new();
    let mut failures = Vec::new();
    // one request in flight at a time keeps scripted replies in batch order
    for b in 0..plan.n_batches {
        let req = ChatRequest::new(&plan.model_id, prompt.clone())
            .temperature(plan.temperature)
            .max_tokens(plan.max_tokens)
            .tag(format!("{prefix}-b{b:03}"));
        let text = match backend.complete(req).await {
            Ok(r) => r.text,
            Err(e) => {
                tracing::warn!(batch = b, error = %e, "generation batch failed");
                failures.push(BatchFailure {
                    batch: b,
                    kind: e.code().to_string(),
                    message: e.to_string(),
                });
                continue;
            }
        };
        let (candidates, found) = parse_generation_output(&text, plan.batch_size);
        issues.extend(found.into_iter().map(|issue| BatchIssue { batch: b, issue }));
        for (k, c) in candidates.iter().enumerate() {
            let base = format!("{prefix}-b{b:03}-p{k}");
            records.extend(candidate_records(c, category, &plan.model_id, &base, &provenance, created_at));
        }
    }
    let (records, dropped) = dedup(records);
    let summary = validity_summary(&records);
    Ok(GenerationOutcome {
        records,
        duplicates_dropped: dropped.len(),
        issues,
        failures,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{BiasTag, Resolution};
    use chrono::{DateTime, Utc};

    fn cand(s1: &str, s2: &str, a1: Resolution, a2: Resolution) -> ParsedPairCandidate {
        ParsedPairCandidate {
            sentence1: s1.into(),
            sentence2: s2.into(),
            pronoun: "it".into(),
            option_a: "the trophy".into(),
            option_b: "the suitcase".into(),
            answer1: a1,
            answer2: a2,
        }
    }

    fn prov() -> PromptProvenance {
        PromptProvenance {
            template: TemplateKind::Toe,
            query: QueryKind::Wdq,
            batch_size: 3,
        }
    }

    #[test]
    fn valid_pair_records() {
        let c = cand(
            "The trophy does not fit in the suitcase because it is too big.",
            "The trophy does not fit in the suitcase because it is too small.",
            Resolution::FirstEntity,
            Resolution::SecondEntity,
        );
        let recs = candidate_records(&c, Category::Traditional, "m", "gen-x", &prov(), DateTime::<Utc>::UNIX_EPOCH);
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].id(), "gen-x-a");
        assert_eq!(recs[1].instance.pair_id.as_deref(), Some("gen-x"));
        assert_eq!(recs[0].instance.special_word.as_deref(), Some("big"));
        assert_eq!(recs[1].instance.special_word.as_deref(), Some("small"));
        assert!(recs.iter().all(|r| r.validity == Some(ValidityLabel::Valid)));
    }

    #[test]
    fn no_flip_is_semi_valid_for_both_members() {
        let c = cand(
            "The trophy does not fit in the suitcase because it is too big.",
            "The trophy does not fit in the suitcase because it is too large.",
            Resolution::FirstEntity,
            Resolution::FirstEntity,
        );
        let recs = candidate_records(&c, Category::Traditional, "m", "g", &prov(), DateTime::<Utc>::UNIX_EPOCH);
        for r in &recs {
            assert_eq!(r.structural_violations, vec![Violation::NoResolutionFlip]);
            assert_eq!(r.validity, Some(ValidityLabel::SemiValid));
        }
        assert_eq!(validity_summary(&recs).counts[&ValidityLabel::SemiValid], 1);
    }

    #[test]
    fn ambiguous_gold_violation_reported_once() {
        let c = cand(
            "The trophy sat by the suitcase and it was red.",
            "The trophy sat by the suitcase and it was blue.",
            Resolution::FirstEntity,
            Resolution::SecondEntity,
        );
        let recs = candidate_records(&c, Category::Ambiguous, "m", "g", &prov(), DateTime::<Utc>::UNIX_EPOCH);
        assert_eq!(recs[0].structural_violations, vec![Violation::AmbiguousGoldNotNeither]);
    }

    #[test]
    fn offensive_sentences_stand_alone() {
        let c = cand(
            "The trophy and the suitcase were there and it was mocked.",
            "The trophy met the suitcase and it left.",
            Resolution::Neither,
            Resolution::Neither,
        );
        let cat = Category::Offensive(BiasTag::Race);
        let recs = candidate_records(&c, cat, "m", "g", &prov(), DateTime::<Utc>::UNIX_EPOCH);
        assert!(recs.iter().all(|r| r.instance.pair_id.is_none() && r.instance.special_word.is_none()));
        assert_eq!(validity_summary(&recs).units, 2);
    }

    #[test]
    fn assess_matches_generation_verdicts() {
        let c = cand(
            "The trophy does not fit in the suitcase because it is too big.",
            "The trophy does not fit in the suitcase because it is too large.",
            Resolution::FirstEntity,
            Resolution::FirstEntity,
        );
        let recs = candidate_records(&c, Category::Traditional, "m", "g", &prov(), DateTime::<Utc>::UNIX_EPOCH);
        let mut stripped: Vec<DatasetRecord> = recs
            .iter()
            .map(|r| DatasetRecord { structural_violations: vec![], validity: None, ..r.clone() })
            .collect();
        assess(&mut stripped);
        assert_eq!(stripped, recs);
    }

    #[test]
    fn slugs() {
        assert_eq!(slug("gpt-4"), "gpt_4");
        assert_eq!(slug("offensive:race"), "offensive_race");
        assert_eq!(slug("Claude 3 Opus"), "claude_3_opus");
    }

    #[test]
    fn empty_summary_is_undefined() {
        let s = validity_summary(&[]);
        assert_eq!(s.units, 0);
        assert!(s.fractions.values().all(Option::is_none));
    }
}
