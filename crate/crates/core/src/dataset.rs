//! JSONL persistence, deduplication, stratified splits and descriptive stats.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agreement::AnnotationVerdict;
use crate::prompt::{QueryKind, TemplateKind};
use crate::schema::{check_invariants, tokenize, CategoryKind, ValidityLabel, Violation, WscInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValiditySource {
    Structural,
    Annotation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptProvenance {
    pub template: TemplateKind,
    pub query: QueryKind,
    pub batch_size: usize,
}

/// One line of a dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub instance: WscInstance,
    #[serde(default)]
    pub structural_violations: Vec<Violation>,
    #[serde(default)]
    pub validity: Option<ValidityLabel>,
    #[serde(default)]
    pub validity_source: Option<ValiditySource>,
    #[serde(default)]
    pub annotations: Vec<AnnotationVerdict>,
    pub created_at: DateTime<Utc>,
    #[serde(default)]
    pub prompt_provenance: Option<PromptProvenance>,
}

impl DatasetRecord {
    pub fn new(instance: WscInstance, created_at: DateTime<Utc>) -> Self {
        DatasetRecord {
            instance,
            structural_violations: Vec::new(),
            validity: None,
            validity_source: None,
            annotations: Vec::new(),
            created_at,
            prompt_provenance: None,
        }
    }

    pub fn id(&self) -> &str {
        &self.instance.id
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("line {line}: field `{field}`: {message}")]
    Schema {
        line: usize,
        field: String,
        message: String,
    },
}

impl StoreError {
    fn io(path: &Path, source: io::Error) -> Self {
        StoreError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Timestamp source. Fixed clocks keep output files byte-identical across runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clock {
    System,
    Fixed(DateTime<Utc>),
}

impl Clock {
    /// `SOURCE_DATE_EPOCH` wins when set; otherwise deterministic runs use the
    /// Unix epoch and everything else uses the system clock.
    pub fn from_env(deterministic: bool) -> Clock {
        if let Some(ts) = std::env::var("SOURCE_DATE_EPOCH")
            .ok()
            .and_then(|v| v.trim().parse::<i64>().ok())
            .and_then(|secs| Utc.timestamp_opt(secs, 0).single())
        {
            return Clock::Fixed(ts);
        }
        if deterministic {
            Clock::Fixed(DateTime::<Utc>::UNIX_EPOCH)
        } else {
            Clock::System
        }
    }

    pub fn now(&self) -> DateTime<Utc> {
        match self {
            Clock::System => Utc::now(),
            Clock::Fixed(t) => *t,
        }
    }
}

/// Whole-file replace: write a temp file next to `path`, fsync, rename.
pub fn write_bytes_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| StoreError::io(dir, e))?;
    }
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| StoreError::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| StoreError::io(&tmp, e))?;
        f.sync_all().map_err(|e| StoreError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| StoreError::io(path, e))
}

/// One JSON value per line, written atomically.
pub fn write_jsonl_atomic<T: Serialize>(path: &Path, items: &[T]) -> Result<(), StoreError> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).map_err(|e| StoreError::io(path, io::Error::other(e)))?;
        buf.push(b'\n');
    }
    write_bytes_atomic(path, &buf)
}

/// Reads a JSONL file; blank lines are skipped. Errors carry 1-based lines.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    let f = fs::File::open(path).map_err(|e| StoreError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| StoreError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| schema_error(i + 1, &e))?;
        out.push(item);
    }
    Ok(out)
}

fn schema_error(line: usize, e: &serde_json::Error) -> StoreError {
    let msg = e.to_string();
    // serde reports "missing field `x`" / "unknown variant ..." without a path
    let field = msg
        .split('`')
        .nth(1)
        .filter(|_| msg.starts_with("missing field"))
        .map(str::to_string)
        .or_else(|| {
            ["gold", "category", "bias_tag", "validity", "created_at"]
                .into_iter()
                .find(|f| msg.contains(f))
                .map(str::to_string)
        })
        .unwrap_or_else(|| "record".into());
    StoreError::Schema {
        line,
        field,
        message: msg,
    }
}

pub fn save(path: &Path, records: &[DatasetRecord]) -> Result<(), StoreError> {
    write_jsonl_atomic(path, records)
}

/// Strict load: every instance must satisfy the schema invariants and ids must
/// be unique. The first offending line aborts the load.
pub fn load(path: &Path) -> Result<Vec<DatasetRecord>, StoreError> {
    let f = fs::File::open(path).map_err(|e| StoreError::io(path, e))?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| StoreError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let n = i + 1;
        let rec: DatasetRecord = serde_json::from_str(&line).map_err(|e| schema_error(n, &e))?;
        check_invariants(&rec.instance).map_err(|e| StoreError::Schema {
            line: n,
            field: e.field().into(),
            message: e.to_string(),
        })?;
        if !seen.insert(rec.instance.id.clone()) {
            return Err(StoreError::Schema {
                line: n,
                field: "id".into(),
                message: format!("duplicate id `{}`", rec.instance.id),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

/// Lenient load for generated candidates, which may break invariants; those
/// breaks are recorded as structural violations instead.
pub fn load_candidates(path: &Path) -> Result<Vec<DatasetRecord>, StoreError> {
    read_jsonl(path)
}

/// Lowercase, drop punctuation, collapse whitespace.
pub fn normalize_sentence(s: &str) -> String {
    let kept: String = s
        .chars()
        .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' })
        .collect::<String>()
        .to_lowercase();
    kept.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// First occurrence of each normalized sentence wins, in input order.
pub fn dedup(records: Vec<DatasetRecord>) -> (Vec<DatasetRecord>, Vec<DatasetRecord>) {
    let mut seen = HashSet::new();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for r in records {
        if seen.insert(normalize_sentence(&r.instance.sentence)) {
            kept.push(r);
        } else {
            dropped.push(r);
        }
    }
    (kept, dropped)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_size: usize,
    pub val_size: usize,
    pub fewshot_size: usize,
    pub seed: u64,
    pub stratify: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SplitError {
    #[error("infeasible split: {0}")]
    InfeasibleSpec(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub test: Vec<DatasetRecord>,
    pub val: Vec<DatasetRecord>,
    pub fewshot: Vec<DatasetRecord>,
    /// Largest |allocated − proportional share| over all (stratum, split) cells.
    pub max_deviation: f64,
}

pub type StratumKey = (CategoryKind, String);

pub fn stratum_of(r: &DatasetRecord) -> StratumKey {
    (r.instance.category.kind(), r.instance.generator_model.clone())
}

/// Records sharing a pair id travel together; everything else is a singleton.
fn units(records: &[DatasetRecord]) -> Vec<Vec<usize>> {
    let mut by_pair: HashMap<&str, usize> = HashMap::new();
    let mut out: Vec<Vec<usize>> = Vec::new();
    for (i, r) in records.iter().enumerate() {
        match r.instance.pair_id.as_deref() {
            Some(pid) => match by_pair.get(pid) {
                Some(&u) => out[u].push(i),
                None => {
                    by_pair.insert(pid, out.len());
                    out.push(vec![i]);
                }
            },
            None => out.push(vec![i]),
        }
    }
    // groups larger than a pair are malformed; split them rather than fail
    let mut flat = Vec::with_capacity(out.len());
    for u in out {
        if u.len() > 2 {
            tracing::warn!(size = u.len(), "pair group larger than two, splitting");
            flat.extend(u.into_iter().map(|i| vec![i]));
        } else {
            flat.push(u);
        }
    }
    flat
}

struct Stratum {
    singles: Vec<Vec<usize>>,
    pairs: Vec<Vec<usize>>,
    size: usize,
}

/// Deterministic, stratified partition into test/val/fewshot.
///
/// Each stratum (category kind × generator, or one stratum when
/// `stratify` is off) gets, in every split, a count within ±1 record of its
/// proportional share whenever pair constraints allow; otherwise the tolerance
/// widens and the achieved deviation is reported in `max_deviation`.
pub fn split(records: &[DatasetRecord], spec: &SplitSpec) -> Result<Splits, SplitError> {
    let n = records.len();
    let total = spec.test_size + spec.val_size + spec.fewshot_size;
    if total > n {
        return Err(SplitError::InfeasibleSpec(format!(
            "requested {total} records but the dataset has {n}"
        )));
    }
    let mut cols = vec![spec.test_size, spec.val_size, spec.fewshot_size];
    if total < n {
        cols.push(n - total);
    }

    let mut strata: BTreeMap<StratumKey, Stratum> = BTreeMap::new();
    for u in units(records) {
        let key = if spec.stratify {
            stratum_of(&records[u[0]])
        } else {
            (CategoryKind::Traditional, String::new())
        };
        let s = strata.entry(key).or_insert_with(|| Stratum {
            singles: Vec::new(),
            pairs: Vec::new(),
            size: 0,
        });
        s.size += u.len();
        if u.len() == 2 {
            s.pairs.push(u);
        } else {
            s.singles.push(u);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for s in strata.values_mut() {
        s.singles.shuffle(&mut rng);
        s.pairs.shuffle(&mut rng);
    }
    let rows: Vec<&Stratum> = strata.values().collect();
    let (alloc, max_deviation) = allocate(&rows, &cols, n)?;

    let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); cols.len()];
    for (s, x) in rows.iter().zip(&alloc) {
        let mut singles = s.singles.iter();
        let mut pairs = s.pairs.iter();
        let mut single_counts: Vec<usize> = x.iter().map(|v| v % 2).collect();
        let mut spare = s.singles.len() - single_counts.iter().sum::<usize>();
        for (c, &want) in x.iter().enumerate() {
            let room = (want - single_counts[c]) / 2 * 2;
            let extra = room.min(spare) / 2 * 2;
            single_counts[c] += extra;
            spare -= extra;
        }
        debug_assert_eq!(spare, 0);
        for (c, &want) in x.iter().enumerate() {
            for _ in 0..single_counts[c] {
                assigned[c].extend(singles.next().expect("singleton available"));
            }
            for _ in 0..(want - single_counts[c]) / 2 {
                assigned[c].extend(pairs.next().expect("pair available"));
            }
        }
    }
    let mut take = |c: usize| -> Vec<DatasetRecord> {
        let mut idx = std::mem::take(&mut assigned[c]);
        idx.sort_unstable();
        idx.into_iter().map(|i| records[i].clone()).collect()
    };
    Ok(Splits {
        test: take(0),
        val: take(1),
        fewshot: take(2),
        max_deviation,
    })
}

/// Integer cell counts per (stratum, column) with exact row and column sums,
/// each cell within `tol` of its proportional share. Pair-only strata take
/// even counts; a stratum can fill at most as many odd cells as it has
/// singletons.
fn allocate(rows: &[&Stratum], cols: &[usize], n: usize) -> Result<(Vec<Vec<usize>>, f64), SplitError> {
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    let shares: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| cols.iter().map(|&c| r.size as f64 * c as f64 / n as f64).collect())
        .collect();
    let mut tol = 1.0;
    loop {
        let mut search = Search {
            rows,
            shares: &shares,
            cols,
            tol,
            budget: 2_000_000,
            chosen: Vec::new(),
        };
        let mut remaining = cols.to_vec();
        if search.row(0, &mut remaining) {
            let dev = search
                .chosen
                .iter()
                .zip(&shares)
                .flat_map(|(x, q)| x.iter().zip(q).map(|(&a, &b)| (a as f64 - b).abs()))
                .fold(0.0, f64::max);
            return Ok((search.chosen, dev));
        }
        if tol > n as f64 {
            return Err(SplitError::InfeasibleSpec(
                "no allocation satisfies the pair constraints".into(),
            ));
        }
        tol *= 2.0;
    }
}

struct Search<'a> {
    rows: &'a [&'a Stratum],
    shares: &'a [Vec<f64>],
    cols: &'a [usize],
    tol: f64,
    budget: usize,
    chosen: Vec<Vec<usize>>,
}

impl Search<'_> {
    fn bounds(&self, r: usize, c: usize) -> (usize, usize) {
        let q = self.shares[r][c];
        let lo = (q - self.tol).ceil().max(0.0) as usize;
        let hi = ((q + self.tol).floor() as usize).min(self.rows[r].size);
        (lo, hi)
    }

    fn row(&mut self, r: usize, remaining: &mut [usize]) -> bool {
        if r == self.rows.len() {
            return remaining.iter().all(|&x| x == 0);
        }
        // prune: what is left in each column must fit the remaining rows
        for (c, &left) in remaining.iter().enumerate() {
            let (lo, hi) = (r..self.rows.len())
                .map(|k| self.bounds(k, c))
                .fold((0, 0), |(a, b), (l, h)| (a + l, b + h));
            if left < lo || left > hi {
                return false;
            }
        }
        let mut cell = vec![0; self.cols.len()];
        self.cell(r, 0, self.rows[r].size, &mut cell, remaining)
    }

    fn cell(&mut self, r: usize, c: usize, left: usize, cell: &mut Vec<usize>, remaining: &mut [usize]) -> bool {
        if self.budget == 0 {
            return false;
        }
        self.budget -= 1;
        let ncols = self.cols.len();
        let (lo, hi) = self.bounds(r, c);
        let mut options: Vec<usize> = if c + 1 == ncols {
            vec![left]
        } else {
            (lo..=hi.min(left)).collect()
        };
        options.retain(|&v| v >= lo && v <= hi && v <= remaining[c]);
        let q = self.shares[r][c];
        options.sort_by(|a, b| {
            (*a as f64 - q)
                .abs()
                .total_cmp(&(*b as f64 - q).abs())
                .then(a.cmp(b))
        });
        for v in options {
            cell[c] = v;
            if c + 1 == ncols {
                let odd = cell.iter().filter(|x| *x % 2 == 1).count();
                if odd > self.rows[r].singles.len() {
                    continue;
                }
                for (k, x) in cell.iter().enumerate() {
                    remaining[k] -= x;
                }
                self.chosen.push(cell.clone());
                if self.row(r + 1, remaining) {
                    return true;
                }
                self.chosen.pop();
                for (k, x) in cell.iter().enumerate() {
                    remaining[k] += x;
                }
            } else if self.cell(r, c + 1, left - v, cell, remaining) {
                return true;
            }
        }
        false
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub count: usize,
    pub category_counts: BTreeMap<String, usize>,
    pub category_fractions: BTreeMap<String, f64>,
    pub generator_counts: BTreeMap<String, usize>,
    pub generator_fractions: BTreeMap<String, f64>,
    pub pronoun_histogram: BTreeMap<String, usize>,
    pub bias_tag_histogram: BTreeMap<String, usize>,
}

pub fn stats(records: &[DatasetRecord]) -> DatasetStats {
    let mut s = DatasetStats {
        count: records.len(),
        ..Default::default()
    };
    for r in records {
        let inst = &r.instance;
        *s.category_counts.entry(inst.category.kind().to_string()).or_default() += 1;
        *s.generator_counts.entry(inst.generator_model.clone()).or_default() += 1;
        *s.pronoun_histogram.entry(tokenize(&inst.pronoun).join(" ")).or_default() += 1;
        if let Some(tag) = inst.category.bias_tag() {
            *s.bias_tag_histogram.entry(tag.to_string()).or_default() += 1;
        }
    }
    let frac = |m: &BTreeMap<String, usize>| -> BTreeMap<String, f64> {
        m.iter()
            .map(|(k, v)| (k.clone(), *v as f64 / records.len() as f64))
            .collect()
    };
    s.category_fractions = frac(&s.category_counts);
    s.generator_fractions = frac(&s.generator_counts);
    s
}
