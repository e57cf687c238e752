use std::fs;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use winoforge_core::dataset::DatasetRecord;
use winoforge_core::eval::{checkpoint_path, run_eval, EvalRun, Prediction, RunOptions};
use winoforge_core::prompt::TemplateKind;
use winoforge_core::schema::{Category, Resolution, WscInstance};
use winoforge_llm::{mock_script, Backend, Matcher, RetryPolicy, ScriptRule};

fn dataset(n: usize) -> Vec<DatasetRecord> {
    (0..n)
        .map(|i| {
            DatasetRecord::new(
                WscInstance {
                    id: format!("inst-{i:03}"),
                    sentence: format!("Ann thanked Bea {i} times because she helped."),
                    candidate_a: "Ann".into(),
                    candidate_b: "Bea".into(),
                    pronoun: "she".into(),
                    gold: Resolution::SecondEntity,
                    category: Category::Traditional,
                    generator_model: "gen".into(),
                    pair_id: None,
                    special_word: None,
                },
                DateTime::<Utc>::UNIX_EPOCH,
            )
        })
        .collect()
}

fn backend(rules: Vec<ScriptRule>) -> Backend {
    Backend::new(Arc::new(mock_script(rules, 11)), 4, RetryPolicy::default())
}

fn opts(dir: &std::path::Path, max_chunks: Option<usize>) -> RunOptions {
    RunOptions {
        checkpoint_dir: Some(dir.to_path_buf()),
        chunk_size: 5,
        max_chunks,
        ..RunOptions::default()
    }
}

#[tokio::test]
async fn resumed_run_equals_uninterrupted_run() {
    let ds = dataset(23);
    let run = EvalRun::new("evaluator", TemplateKind::Cot, "val");

    let full_dir = tempfile::tempdir().unwrap();
    let full = run_eval(&run, &backend(vec![]), &ds, &opts(full_dir.path(), None)).await.unwrap();
    assert_eq!(full.len(), 23);

    let dir = tempfile::tempdir().unwrap();
    let partial = run_eval(&run, &backend(vec![]), &ds, &opts(dir.path(), Some(2))).await.unwrap();
    assert_eq!(partial.len(), 10);
    let resumed = run_eval(&run, &backend(vec![]), &ds, &opts(dir.path(), None)).await.unwrap();
    assert_eq!(resumed, full);
    let ids: Vec<_> = resumed.iter().map(|r| r.instance_id.as_str()).collect();
    let want: Vec<_> = ds.iter().map(|r| r.id()).collect();
    assert_eq!(ids, want);
}

#[tokio::test]
async fn torn_checkpoint_tail_is_recomputed() {
    let ds = dataset(8);
    let run = EvalRun::new("evaluator", TemplateKind::Nt, "test");
    let dir = tempfile::tempdir().unwrap();
    let first = run_eval(&run, &backend(vec![]), &ds, &opts(dir.path(), None)).await.unwrap();

    let ckpt = checkpoint_path(dir.path(), &run);
    let text = fs::read_to_string(&ckpt).unwrap();
    let cut = text.len() - 40;
    fs::write(&ckpt, &text[..cut]).unwrap();

    let again = run_eval(&run, &backend(vec![]), &ds, &opts(dir.path(), None)).await.unwrap();
    assert_eq!(again, first);
    let lines = fs::read_to_string(&ckpt).unwrap();
    assert_eq!(lines.lines().count(), 8);
    assert!(lines.ends_with('\n'));
}

#[tokio::test]
async fn self_consistency_sends_three_votes() {
    let ds = dataset(2);
    let run = EvalRun::new("evaluator", TemplateKind::ScCot, "val");
    let rules = vec![ScriptRule::new(Matcher::Any, "A: 1; Bea did the helping.")];
    let out = run_eval(&run, &backend(rules), &ds, &RunOptions::default()).await.unwrap();
    for r in &out {
        assert_eq!(r.raw.len(), 3);
        assert_eq!(r.predicted, Prediction::SecondEntity);
        assert!(r.correct);
    }
}

#[tokio::test]
async fn empty_slice_is_an_error() {
    let run = EvalRun::new("evaluator", TemplateKind::Nt, "val");
    assert!(run_eval(&run, &backend(vec![]), &[], &RunOptions::default()).await.is_err());
}

#[test]
fn run_id_is_path_safe() {
    let run = EvalRun::new("org/model:v1", TemplateKind::ScCot, "val");
    assert_eq!(run.run_id(), "org_model_v1-sc_cot-val-0");
}
