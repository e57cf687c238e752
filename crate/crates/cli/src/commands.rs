use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use winoforge_annotate::{serve, system_clock, AnnotateConfig, Service};
use winoforge_core::dataset::{
    self, load, load_candidates, read_jsonl, save, write_bytes_atomic, write_jsonl_atomic, Clock, DatasetRecord,
    SplitSpec, StoreError,
};
use winoforge_core::eval::{
    consistency_matrix, emit_report, render_markdown, run_eval, ConsistencyMatrix, EvalResult, EvalRun, Report,
    RunOptions, ScoreOptions, ShotsPolicy,
};
use winoforge_core::generate::{assess, run_generation, GenerationPlan};
use winoforge_core::prompt::{default_bank, load_bank, QueryKind, TemplateKind};
use winoforge_core::schema::{check_invariants, CategoryKind, ValidityLabel};

use crate::args::{
    AnalyzeArgs, AnnotateArgs, DedupArgs, EvaluateArgs, GenerateArgs, ReportArgs, SplitArgs, StatsArgs,
    ValidateArgs,
};
use crate::config::{parse_name, pick, switch, Resolved};
use crate::CliError;

fn input(e: StoreError) -> CliError {
    CliError::Config(e.to_string())
}

fn output(e: StoreError) -> CliError {
    CliError::Runtime(e.to_string())
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("serializable");
    out.push(b'\n');
    out
}

fn pct(x: Option<f64>) -> String {
    x.map_or("undefined".into(), |v| format!("{:.1}%", v * 100.0))
}

pub async fn generate(cfg: &Resolved, a: GenerateArgs) -> Result<(), CliError> {
    let f = &cfg.file.generate;
    let model = a
        .model
        .or_else(|| f.model.clone())
        .ok_or_else(|| CliError::Config("--model is required".into()))?;
    let template: TemplateKind = parse_name("template", &pick(a.template, f.template.clone(), "toe".into()))?;
    let query: QueryKind = parse_name("query", &pick(a.query, f.query.clone(), "wdq".into()))?;
    if query.is_offensive() && !switch(a.enable_offensive, f.enable_offensive) {
        return Err(CliError::Config(format!(
            "query `{query}` produces offensive content and requires --enable-offensive"
        )));
    }
    let bank = match a.bank.or_else(|| f.bank.clone()) {
        Some(p) => load_bank(&p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
        None => default_bank(),
    };
    let mut plan = GenerationPlan::new(model, template, query);
    plan.batch_size = pick(a.batch_size, f.batch_size, plan.batch_size);
    plan.n_batches = pick(a.batches, f.batches, plan.n_batches);
    plan.temperature = pick(a.temperature, f.temperature, plan.temperature);
    plan.max_tokens = pick(a.max_tokens, f.max_tokens, plan.max_tokens);

    let backend = cfg.backend(a.transcript.as_deref())?;
    let clock = Clock::from_env(cfg.deterministic());
    let outcome = run_generation(&plan, &backend, &bank, clock.now())
        .await
        .map_err(|e| CliError::Config(e.to_string()))?;

    let mut records = Vec::new();
    if a.append && a.out.exists() {
        records = load_candidates(&a.out).map_err(input)?;
    }
    records.extend(outcome.records);
    let (records, dropped) = dataset::dedup(records);
    save(&a.out, &records).map_err(output)?;

    for i in &outcome.issues {
        eprintln!("batch {}: {}", i.batch, i.issue);
    }
    for fl in &outcome.failures {
        eprintln!("batch {} failed ({}): {}", fl.batch, fl.kind, fl.message);
    }
    let s = &outcome.summary;
    let counts: Vec<String> = s
        .counts
        .iter()
        .map(|(l, c)| format!("{l} {c} ({})", pct(s.fractions[l])))
        .collect();
    println!("wrote {} records to {}", records.len(), a.out.display());
    println!("units {}: {}", s.units, counts.join(", "));
    println!("duplicates dropped {}", outcome.duplicates_dropped + dropped.len());
    if !outcome.failures.is_empty() && outcome.failures.len() == plan.n_batches {
        return Err(CliError::Runtime("every generation batch failed".into()));
    }
    Ok(())
}

pub fn validate(a: ValidateArgs) -> Result<(), CliError> {
    let threshold: ValidityLabel = parse_name("--fail-on", &a.fail_on)?;
    if threshold == ValidityLabel::Valid {
        return Err(CliError::Config("--fail-on must be semi_valid or invalid".into()));
    }
    let mut records = load_candidates(&a.dataset).map_err(input)?;
    assess(&mut records);
    let mut failed = 0;
    for r in &records {
        let label = r.validity.unwrap_or(ValidityLabel::Invalid);
        let mut codes: Vec<String> = r.structural_violations.iter().map(|v| v.code()).collect();
        let broken = check_invariants(&r.instance).err();
        if let Some(e) = &broken {
            codes.push(format!("invariant:{}", e.field()));
        }
        if label >= threshold || broken.is_some() {
            failed += 1;
            println!("{}\t{}\t{}", r.id(), label, codes.join(","));
        }
    }
    if let Some(out) = &a.out {
        save(out, &records).map_err(output)?;
    }
    eprintln!("{} records checked, {failed} failed", records.len());
    if failed > 0 {
        return Err(CliError::Validation(format!("{failed} of {} records", records.len())));
    }
    Ok(())
}

pub fn dedup(a: DedupArgs) -> Result<(), CliError> {
    let records = load_candidates(&a.dataset).map_err(input)?;
    let (kept, dropped) = dataset::dedup(records);
    save(&a.out, &kept).map_err(output)?;
    for r in &dropped {
        eprintln!("dropped {}", r.id());
    }
    println!("kept {} dropped {}", kept.len(), dropped.len());
    Ok(())
}

#[derive(Serialize)]
struct SplitSummary {
    spec: SplitSpec,
    sizes: BTreeMap<&'static str, usize>,
    max_deviation: f64,
}

pub fn split(cfg: &Resolved, a: SplitArgs) -> Result<(), CliError> {
    let f = &cfg.file.split;
    let records = load(&a.dataset).map_err(input)?;
    let spec = SplitSpec {
        test_size: pick(a.test, f.test, 2300),
        val_size: pick(a.val, f.val, 700),
        fewshot_size: pick(a.fewshot, f.fewshot, 26),
        seed: cfg.seed.unwrap_or(0),
        stratify: !a.no_stratify && f.stratify.unwrap_or(true),
    };
    let splits = dataset::split(&records, &spec).map_err(|e| CliError::Config(e.to_string()))?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| CliError::Runtime(format!("{}: {e}", a.out_dir.display())))?;
    let parts = [("test", &splits.test), ("val", &splits.val), ("fewshot", &splits.fewshot)];
    for (name, recs) in parts {
        save(&a.out_dir.join(format!("{name}.jsonl")), recs).map_err(output)?;
    }
    let summary = SplitSummary {
        spec,
        sizes: parts.iter().map(|(n, r)| (*n, r.len())).collect(),
        max_deviation: splits.max_deviation,
    };
    write_bytes_atomic(&a.out_dir.join("split.json"), &json_bytes(&summary)).map_err(output)?;
    println!(
        "test {} val {} fewshot {} (max deviation {:.2})",
        splits.test.len(),
        splits.val.len(),
        splits.fewshot.len(),
        splits.max_deviation
    );
    Ok(())
}

pub fn stats(a: StatsArgs) -> Result<(), CliError> {
    let records = load_candidates(&a.dataset).map_err(input)?;
    let s = dataset::stats(&records);
    if a.json {
        print!("{}", String::from_utf8(json_bytes(&s)).expect("utf-8"));
        return Ok(());
    }
    print!("{}", stats_table(&s));
    Ok(())
}

fn stats_table(s: &dataset::DatasetStats) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "instances {}", s.count);
    let section = |out: &mut String, title: &str, counts: &BTreeMap<String, usize>| {
        let _ = writeln!(out, "\n{title:<24} {:>7} {:>8}", "count", "share");
        for (k, c) in counts {
            let share = if s.count > 0 { *c as f64 / s.count as f64 } else { 0.0 };
            let _ = writeln!(out, "{k:<24} {c:>7} {:>7.1}%", share * 100.0);
        }
    };
    section(&mut out, "category", &s.category_counts);
    section(&mut out, "generator", &s.generator_counts);
    section(&mut out, "pronoun", &s.pronoun_histogram);
    if !s.bias_tag_histogram.is_empty() {
        section(&mut out, "bias tag", &s.bias_tag_histogram);
    }
    out
}

fn default_journal(dataset: &Path) -> PathBuf {
    let mut name = dataset.as_os_str().to_owned();
    name.push(".verdicts.jsonl");
    PathBuf::from(name)
}

pub async fn annotate(cfg: &Resolved, a: AnnotateArgs) -> Result<(), CliError> {
    let f = &cfg.file.annotate;
    let records = load(&a.dataset).map_err(input)?;
    let annotators: BTreeSet<String> = if a.annotators.is_empty() {
        f.annotators.iter().cloned().collect()
    } else {
        a.annotators.into_iter().collect()
    };
    let config = AnnotateConfig {
        required_raters: pick(a.required_raters, f.required_raters, 2),
        lease: chrono::Duration::minutes(f.lease_minutes.unwrap_or(10)),
        allowlist: (!annotators.is_empty()).then_some(annotators),
    };
    if config.required_raters == 0 {
        return Err(CliError::Config("--required-raters must be at least 1".into()));
    }
    let journal = a.journal.unwrap_or_else(|| default_journal(&a.dataset));
    let svc = Service::open(records, &journal, config, system_clock()).map_err(|e| CliError::Config(e.to_string()))?;

    if let Some(out) = a.export_filtered {
        let (kept, view) = svc.read(|s| (s.filtered_records(), s.filter_view()));
        save(&out, &kept).map_err(output)?;
        let mut report_path = out.as_os_str().to_owned();
        report_path.push(".filter.json");
        write_bytes_atomic(Path::new(&report_path), &json_bytes(&view)).map_err(output)?;
        println!(
            "kept {} dropped {} pending {}",
            view.report.kept_ids.len(),
            view.report.dropped_ids.len(),
            view.pending_ids.len()
        );
        return Ok(());
    }

    let port = pick(a.port, f.port, 8080);
    let addr = SocketAddr::from(([127, 0, 0, 1], port));
    let ui_dir = a.ui_dir.or_else(|| f.ui_dir.clone());
    eprintln!("annotation service on http://{addr}/ (journal {})", journal.display());
    serve(Arc::new(svc), addr, ui_dir)
        .await
        .map_err(|e| CliError::Runtime(format!("{addr}: {e}")))
}

fn parse_shots(raw: &str) -> Result<ShotsPolicy, CliError> {
    serde_json::from_value(serde_json::Value::String(raw.into()))
        .map_err(|_| CliError::Config(format!("invalid shots policy `{raw}` (zero, bank, by_category)")))
}

fn write_report(
    dir: &Path,
    dataset: &[DatasetRecord],
    by_model: &BTreeMap<String, Vec<EvalResult>>,
    opts: ScoreOptions,
) -> Result<(Report, Option<ConsistencyMatrix>), CliError> {
    let all: Vec<EvalResult> = by_model.values().flatten().cloned().collect();
    let report = winoforge_core::eval::score(&all, dataset, opts).map_err(|e| CliError::Config(e.to_string()))?;
    let matrix = if by_model.len() > 1 {
        Some(consistency_matrix(by_model, dataset, opts).map_err(|e| CliError::Config(e.to_string()))?)
    } else {
        None
    };
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    emit_report(dir, &report, matrix.as_ref()).map_err(output)?;
    Ok((report, matrix))
}

pub async fn evaluate(cfg: &Resolved, a: EvaluateArgs) -> Result<(), CliError> {
    let f = &cfg.file.evaluate;
    let (path, slice) = if a.dataset.is_dir() {
        let split = a.split.clone().unwrap_or_else(|| "test".into());
        (a.dataset.join(format!("{split}.jsonl")), split)
    } else {
        let stem = a.split.clone().unwrap_or_else(|| {
            a.dataset
                .file_stem()
                .map_or("dataset".into(), |s| s.to_string_lossy().into_owned())
        });
        (a.dataset.clone(), stem)
    };
    let mut records = load(&path).map_err(input)?;
    if !switch(a.enable_offensive, f.enable_offensive) {
        let before = records.len();
        records.retain(|r| r.instance.category.kind() != CategoryKind::Offensive);
        if records.len() < before {
            eprintln!(
                "skipping {} offensive instances (use --enable-offensive to include them)",
                before - records.len()
            );
        }
    }
    let models = if a.models.is_empty() { f.models.clone() } else { a.models };
    if models.is_empty() {
        return Err(CliError::Config("at least one --model is required".into()));
    }
    let template: TemplateKind = parse_name("template", &pick(a.template, f.template.clone(), "toe".into()))?;
    let shots = parse_shots(&pick(a.shots, f.shots.clone(), "bank".into()))?;
    let score_opts = ScoreOptions {
        exclude_unparseable: switch(a.exclude_unparseable, f.exclude_unparseable),
    };
    let backend = cfg.backend(a.transcript.as_deref())?;
    let opts = RunOptions {
        checkpoint_dir: Some(a.out.join("checkpoints")),
        chunk_size: pick(a.chunk_size, f.chunk_size, 16),
        ..RunOptions::default()
    };

    let mut by_model = BTreeMap::new();
    for model in models {
        let mut run = EvalRun::new(model.clone(), template, slice.clone());
        run.shots_policy = shots;
        run.seed = cfg.seed.unwrap_or(0);
        run.temperature = pick(a.temperature, f.temperature, run.temperature);
        run.max_tokens = pick(a.max_tokens, f.max_tokens, run.max_tokens);
        let results = run_eval(&run, &backend, &records, &opts)
            .await
            .map_err(|e| CliError::Config(e.to_string()))?;
        let path = a.out.join(format!("results-{}.jsonl", run.run_id()));
        write_jsonl_atomic(&path, &results).map_err(output)?;
        let correct = results.iter().filter(|r| r.correct).count();
        println!("{model}: {correct}/{} correct -> {}", results.len(), path.display());
        by_model.insert(model, results);
    }
    let (report, _) = write_report(&a.out, &records, &by_model, score_opts)?;
    println!("accuracy {} over {} instances", pct(report.accuracy_overall), report.n);
    println!("report written to {}", a.out.join("report.md").display());
    Ok(())
}

pub fn analyze(a: AnalyzeArgs) -> Result<(), CliError> {
    let records = load(&a.dataset).map_err(input)?;
    let mut by_model: BTreeMap<String, Vec<EvalResult>> = BTreeMap::new();
    for p in &a.results {
        for r in read_jsonl::<EvalResult>(p).map_err(input)? {
            by_model.entry(r.model_id.clone()).or_default().push(r);
        }
    }
    let opts = ScoreOptions {
        exclude_unparseable: a.exclude_unparseable,
    };
    let (report, matrix) = write_report(&a.out, &records, &by_model, opts)?;
    print!("{}", render_markdown(&report, matrix.as_ref()));
    Ok(())
}

pub fn report(a: ReportArgs) -> Result<(), CliError> {
    let read = |name: &str| -> Result<Option<Vec<u8>>, CliError> {
        match std::fs::read(a.dir.join(name)) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(CliError::Config(format!("{}: {e}", a.dir.join(name).display()))),
        }
    };
    let bytes = read("report.json")?
        .ok_or_else(|| CliError::Config(format!("{} has no report.json", a.dir.display())))?;
    let report: Report =
        serde_json::from_slice(&bytes).map_err(|e| CliError::Config(format!("report.json: {e}")))?;
    let matrix: Option<ConsistencyMatrix> = match read("consistency.json")? {
        Some(b) => Some(serde_json::from_slice(&b).map_err(|e| CliError::Config(format!("consistency.json: {e}")))?),
        None => None,
    };
    print!("{}", render_markdown(&report, matrix.as_ref()));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shots_names() {
        assert_eq!(parse_shots("zero").unwrap(), ShotsPolicy::Zero);
        assert_eq!(parse_shots("by_category").unwrap(), ShotsPolicy::ByCategory);
        assert!(parse_shots("some").is_err());
    }

    #[test]
    fn journal_next_to_dataset() {
        assert_eq!(default_journal(Path::new("d/x.jsonl")), PathBuf::from("d/x.jsonl.verdicts.jsonl"));
    }
}
