use std::sync::Arc;

use chrono::{DateTime, Utc};
use winoforge_core::generate::{run_generation, GenerationPlan};
use winoforge_core::prompt::{default_bank, QueryKind, TemplateKind};
use winoforge_core::schema::ValidityLabel;
use winoforge_llm::{mock_script, Backend, Matcher, RetryPolicy, ScriptRule};

const BATCH_1: &str = "Here are the pairs.

SENTENCE1: The cat chased the mouse because it was hungry.
SENTENCE2: The cat chased the mouse because it was scared.
PRONOUN: it
OPTION_A: The cat
OPTION_B: the mouse
ANSWER1: A1
ANSWER2: A2

SENTENCE1: Tom lent Bob money because he was rich.
SENTENCE2: Tom lent Bob money because he was broke.
PRONOUN: he
OPTION_A: Tom
OPTION_B: Bob
ANSWER1: A1
ANSWER2: A2

SENTENCE1: The bag was on the desk and it was blue.
SENTENCE2: The bag was on the desk and it was green.
PRONOUN: it
OPTION_A: The bag
OPTION_B: the desk
ANSWER1: A1
ANSWER2: A1
";

const BATCH_2: &str = "SENTENCE1: Jane called Amy because she needed help.
SENTENCE2: Jane called Amy because she offered help.
PRONOUN: she
OPTION_A: Jane
OPTION_B: Amy
ANSWER1: A1
ANSWER2: A2

SENTENCE1: The dog bit the man so it was put down.
SENTENCE2: The dog bit the man so he was taken to hospital.
PRONOUN: it
OPTION_A: The dog
OPTION_B: the man
ANSWER1: A1
ANSWER2: A2

SENTENCE1: Ann met Bea and she smiled.
SENTENCE2: Ann met Bea and she frowned.
PRONOUN: she
OPTION_A: Ann
OPTION_B: Bea
ANSWER1: A1
ANSWER2: A2
";

fn backend() -> Backend {
    let rules = vec![
        ScriptRule::new(Matcher::Sequential, BATCH_1),
        ScriptRule::new(Matcher::Sequential, BATCH_2),
    ];
    Backend::new(Arc::new(mock_script(rules, 1)), 4, RetryPolicy::default())
}

#[tokio::test]
async fn two_batches_of_three_give_six_pairs() {
    let mut plan = GenerationPlan::new("gpt-4", TemplateKind::Toe, QueryKind::Wdq);
    plan.n_batches = 2;
    let out = run_generation(&plan, &backend(), &default_bank(), DateTime::<Utc>::UNIX_EPOCH)
        .await
        .unwrap();
    assert_eq!(out.records.len(), 12);
    assert_eq!(out.summary.units, 6);
    assert!(out.issues.is_empty() && out.failures.is_empty());
    assert_eq!(out.records[0].id(), "gen-gpt_4-toe-wdq-b000-p0-a");
    assert_eq!(out.records[11].id(), "gen-gpt_4-toe-wdq-b001-p2-b");
    // bag/desk does not flip; dog/man differs in too many words and loses
    // the pronoun in its second sentence
    assert_eq!(out.summary.counts[&ValidityLabel::Valid], 4);
    assert_eq!(out.summary.counts[&ValidityLabel::SemiValid], 1);
    assert_eq!(out.summary.counts[&ValidityLabel::Invalid], 1);
}

#[tokio::test]
async fn replay_is_identical() {
    let mut plan = GenerationPlan::new("gpt-4", TemplateKind::Toe, QueryKind::Wdq);
    plan.n_batches = 2;
    let a = run_generation(&plan, &backend(), &default_bank(), DateTime::<Utc>::UNIX_EPOCH).await.unwrap();
    let b = run_generation(&plan, &backend(), &default_bank(), DateTime::<Utc>::UNIX_EPOCH).await.unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[tokio::test]
async fn unparseable_batch_is_reported_not_fatal() {
    let rules = vec![ScriptRule::new(Matcher::Any, "I'd rather not.")];
    let be = Backend::new(Arc::new(mock_script(rules, 1)), 1, RetryPolicy::default());
    let plan = GenerationPlan::new("m", TemplateKind::Cot, QueryKind::Ambiguous);
    let out = run_generation(&plan, &be, &default_bank(), DateTime::<Utc>::UNIX_EPOCH).await.unwrap();
    assert!(out.records.is_empty());
    assert_eq!(out.issues.len(), 1);
    assert_eq!(out.issues[0].issue.code(), "no_blocks_found");
}
