use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::score::{Cell, ConsistencyMatrix, Report};
use crate::dataset::{write_bytes_atomic, StoreError};

/// Published numbers shown next to every report for orientation. They are not
/// produced or checked by this tool.
pub const REFERENCE_NUMBERS: [(&str, &str); 5] = [
    ("GPT-4 accuracy, Tree-of-Experts prompt", "68.7%"),
    ("Human accuracy", "95.1%"),
    ("Random baseline", "33%"),
    ("Human annotator agreement (Fleiss' kappa)", "0.896"),
    ("Tree-of-Experts generation validity", "49.3%"),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFiles {
    pub json: PathBuf,
    pub markdown: PathBuf,
    pub consistency: Option<PathBuf>,
}

fn pct(x: Option<f64>) -> String {
    match x {
        Some(v) => format!("{:.1}%", v * 100.0),
        None => "undefined".into(),
    }
}

fn cell_text(c: &Cell) -> String {
    format!("{} ({}/{})", pct(c.accuracy), c.correct, c.n)
}

pub fn render_markdown(report: &Report, matrix: Option<&ConsistencyMatrix>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Evaluation report\n");
    if !report.models.is_empty() {
        let _ = writeln!(s, "Models: {}\n", report.models.join(", "));
    }
    let _ = writeln!(s, "| metric | value |\n|---|---|");
    let _ = writeln!(s, "| instances scored | {} |", report.n);
    let _ = writeln!(s, "| accuracy | {} |", pct(report.accuracy_overall));
    let _ = writeln!(s, "| random baseline | {} |", pct(Some(report.baseline)));
    let _ = writeln!(s, "| unparseable outputs | {} |", report.n_unparseable);
    let _ = writeln!(s, "| evasions | {} |", report.n_evasion);
    let _ = writeln!(
        s,
        "| unparseable outputs {} | |",
        if report.excluded_unparseable { "excluded from denominators" } else { "counted as incorrect" }
    );
    let ratio = report
        .offensive_to_ambiguous_ratio
        .map_or("undefined".to_string(), |r| format!("{r:.2}"));
    let _ = writeln!(s, "| offensive / ambiguous accuracy ratio | {ratio} |");

    let _ = writeln!(s, "\n## Accuracy by category\n\n| category | accuracy |\n|---|---|");
    for (k, c) in &report.accuracy_by_category {
        let _ = writeln!(s, "| {k} | {} |", cell_text(c));
    }
    let _ = writeln!(s, "\n## Accuracy by generator\n\n| generator | accuracy |\n|---|---|");
    for (k, c) in &report.accuracy_by_generator {
        let _ = writeln!(s, "| {k} | {} |", cell_text(c));
    }
    let _ = writeln!(s, "\n## Errors\n\n| kind | count |\n|---|---|");
    for (k, n) in &report.error_distribution {
        let _ = writeln!(s, "| {k} | {n} |");
    }

    if let Some(m) = matrix {
        let _ = writeln!(s, "\n## Generation-evaluation consistency\n");
        let _ = writeln!(s, "Rows are evaluators, columns are generators.\n");
        let _ = writeln!(s, "| evaluator | {} | self − others |", m.generators.join(" | "));
        let _ = writeln!(s, "|---|{}---|", "---|".repeat(m.generators.len()));
        for e in &m.evaluators {
            let cells: Vec<String> = m
                .generators
                .iter()
                .map(|g| m.cell(e, g).map_or("undefined".into(), cell_text))
                .collect();
            let delta = m.self_vs_others[e]
                .delta
                .map_or("undefined".to_string(), |d| format!("{:+.1} pts", d * 100.0));
            let _ = writeln!(s, "| {e} | {} | {delta} |", cells.join(" | "));
        }
    }

    let _ = writeln!(s, "\n## Literature reference (not measured by this run)\n");
    let _ = writeln!(s, "| quantity | published value |\n|---|---|");
    for (k, v) in REFERENCE_NUMBERS {
        let _ = writeln!(s, "| {k} | {v} |");
    }
    s
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("report types serialize");
    out.push(b'\n');
    out
}

/// Writes `report.json`, `report.md` and, when given, `consistency.json`.
pub fn emit_report(
    dir: &Path,
    report: &Report,
    matrix: Option<&ConsistencyMatrix>,
) -> Result<ReportFiles, StoreError> {
    let files = ReportFiles {
        json: dir.join("report.json"),
        markdown: dir.join("report.md"),
        consistency: matrix.map(|_| dir.join("consistency.json")),
    };
    write_bytes_atomic(&files.json, &json_bytes(report))?;
    write_bytes_atomic(&files.markdown, render_markdown(report, matrix).as_bytes())?;
    if let (Some(m), Some(p)) = (matrix, &files.consistency) {
        write_bytes_atomic(p, &json_bytes(m))?;
    }
    Ok(files)
}
