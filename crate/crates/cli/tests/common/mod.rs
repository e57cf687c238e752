#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chrono::{DateTime, Utc};
use winoforge_core::dataset::DatasetRecord;
use winoforge_core::schema::{BiasTag, Category, Resolution, WscInstance};

pub const GENERATORS: [&str; 3] = ["claude-2", "gpt-4", "gpt-3.5"];

/// Final dataset composition, rows traditional/ambiguous/offensive, columns
/// in `GENERATORS` order. Totals 1376/538/1112 and 1050/1459/517.
pub const KEPT: [[usize; 3]; 3] = [[477, 664, 235], [187, 259, 92], [386, 536, 190]];

/// Candidates per category before human filtering.
pub const CANDIDATES: [usize; 3] = [3800, 1060, 1254];

pub const OFFENSIVE_TAGS: [BiasTag; 5] = [
    BiasTag::Race,
    BiasTag::Religion,
    BiasTag::Sex,
    BiasTag::Appearance,
    BiasTag::Socioeconomic,
];

pub fn epoch() -> DateTime<Utc> {
    DateTime::<Utc>::UNIX_EPOCH
}

pub fn instance(id: &str, category: Category, generator: &str) -> WscInstance {
    let gold = match category {
        Category::Traditional => Resolution::FirstEntity,
        _ => Resolution::Neither,
    };
    WscInstance {
        id: id.into(),
        sentence: format!("Ann met Bea at the market and she waved ({id})."),
        candidate_a: "Ann".into(),
        candidate_b: "Bea".into(),
        pronoun: "she".into(),
        gold,
        category,
        generator_model: generator.into(),
        pair_id: None,
        special_word: None,
    }
}

pub fn record(id: &str, category: Category, generator: &str) -> DatasetRecord {
    DatasetRecord::new(instance(id, category, generator), epoch())
}

pub fn category(row: usize, k: usize) -> Category {
    match row {
        0 => Category::Traditional,
        1 => Category::Ambiguous,
        _ => Category::Offensive(OFFENSIVE_TAGS[k % OFFENSIVE_TAGS.len()]),
    }
}

/// The 3,026-record final dataset. Traditional records come in pairs where
/// the stratum count allows; the odd one out is a single.
pub fn final_dataset() -> Vec<DatasetRecord> {
    let mut out = Vec::new();
    for (row, counts) in KEPT.iter().enumerate() {
        for (g, &n) in counts.iter().enumerate() {
            let paired = n - n % 2;
            for k in 0..n {
                let id = format!("c{row}-g{g}-{k:04}");
                let mut r = record(&id, category(row, k), GENERATORS[g]);
                if row == 0 && k < paired {
                    r.instance.pair_id = Some(format!("p{row}-g{g}-{:04}", k / 2));
                    if k % 2 == 1 {
                        r.instance.gold = Resolution::SecondEntity;
                    }
                }
                out.push(r);
            }
        }
    }
    out
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_winoforge")
}

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn winoforge(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env_remove("SOURCE_DATE_EPOCH")
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn check(step: &str, out: &Output) -> Result<(), String> {
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "{step} exited with {:?}: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

/// generate (three generators) → validate → dedup → split → evaluate →
/// analyze under the mock backend, all outputs inside `dir`.
pub fn run_pipeline(dir: &Path) -> Result<(), String> {
    let e2e = fixtures().join("e2e");
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let cand = p("candidates.jsonl");
    for model in GENERATORS {
        let script = e2e.join(format!("gen-{model}.json"));
        let out = winoforge(&[
            "--mock-script",
            &script.to_string_lossy(),
            "generate",
            "--model",
            model,
            "--template",
            "toe",
            "--query",
            "wdq",
            "--batches",
            "2",
            "--append",
            "--out",
            &cand,
        ]);
        check("generate", &out)?;
    }
    check(
        "validate",
        &winoforge(&["validate", "--dataset", &cand, "--out", &p("checked.jsonl")]),
    )?;
    check(
        "dedup",
        &winoforge(&["dedup", "--dataset", &p("checked.jsonl"), "--out", &p("dataset.jsonl")]),
    )?;
    check(
        "split",
        &winoforge(&[
            "--seed",
            "11",
            "split",
            "--dataset",
            &p("dataset.jsonl"),
            "--test",
            "24",
            "--val",
            "8",
            "--fewshot",
            "4",
            "--out-dir",
            &p("split"),
        ]),
    )?;
    let eval_script = e2e.join("eval.json");
    check(
        "evaluate",
        &winoforge(&[
            "--mock-script",
            &eval_script.to_string_lossy(),
            "--seed",
            "11",
            "evaluate",
            "--dataset",
            &p("split"),
            "--split",
            "test",
            "--model",
            "claude-2",
            "--model",
            "gpt-4",
            "--model",
            "gpt-3.5",
            "--template",
            "sc_cot",
            "--out",
            &p("eval"),
        ]),
    )?;
    let mut results: Vec<String> = std::fs::read_dir(dir.join("eval"))
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("results-")))
        .map(|p| p.to_string_lossy().into_owned())
        .collect();
    results.sort();
    let mut args = vec!["analyze", "--dataset"];
    let test = p("split/test.jsonl");
    args.push(&test);
    args.push("--results");
    args.extend(results.iter().map(String::as_str));
    let analysis = p("analysis");
    args.extend(["--out", &analysis]);
    check("analyze", &winoforge(&args))
}

/// Every regular file under `dir`, relative path and contents, sorted.
pub fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for e in std::fs::read_dir(dir).unwrap().flatten() {
            let path = e.path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
