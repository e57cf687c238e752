//! Human verdicts, Fleiss' kappa and the unanimous-valid filter.

use std::collections::{BTreeMap, HashMap};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::DatasetRecord;
use crate::schema::ValidityLabel;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationVerdict {
    pub annotator_id: String,
    pub instance_id: String,
    pub label: ValidityLabel,
    pub submitted_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum KappaError {
    #[error("item {item} has {found} ratings, expected {expected}")]
    UnequalRaterCounts {
        item: usize,
        expected: usize,
        found: usize,
    },
    #[error("kappa needs at least two raters per item")]
    TooFewRaters,
    #[error("no items to rate")]
    NoItems,
    /// Expected agreement is 1 (a single category used throughout).
    #[error("kappa is undefined when every rating falls in one category")]
    Undefined,
}

/// Fleiss' kappa from an items × categories count matrix. Every row must sum
/// to the same rater count n ≥ 2.
pub fn fleiss_kappa(counts: &[Vec<usize>]) -> Result<f64, KappaError> {
    let first = counts.first().ok_or(KappaError::NoItems)?;
    let n: usize = first.iter().sum();
    for (i, row) in counts.iter().enumerate() {
        let found: usize = row.iter().sum();
        if found != n {
            return Err(KappaError::UnequalRaterCounts {
                item: i,
                expected: n,
                found,
            });
        }
    }
    if n < 2 {
        return Err(KappaError::TooFewRaters);
    }
    let n_items = counts.len() as f64;
    let nf = n as f64;
    let p_bar = counts
        .iter()
        .map(|row| {
            let sq: usize = row.iter().map(|c| c * c).sum();
            (sq - n) as f64 / (nf * (nf - 1.0))
        })
        .sum::<f64>()
        / n_items;
    let k = counts.iter().map(Vec::len).max().unwrap_or(0);
    let pe: f64 = (0..k)
        .map(|j| {
            let col: usize = counts.iter().map(|r| r.get(j).copied().unwrap_or(0)).sum();
            let p = col as f64 / (n_items * nf);
            p * p
        })
        .sum();
    if (1.0 - pe).abs() < f64::EPSILON {
        return Err(KappaError::Undefined);
    }
    Ok((p_bar - pe) / (1.0 - pe))
}

/// Kappa from per-item label lists; `categories` fixes the column order.
pub fn fleiss_from_labels<L: PartialEq>(items: &[Vec<L>], categories: &[L]) -> Result<f64, KappaError> {
    let counts: Vec<Vec<usize>> = items
        .iter()
        .map(|labels| {
            categories
                .iter()
                .map(|c| labels.iter().filter(|l| *l == c).count())
                .collect()
        })
        .collect();
    fleiss_kappa(&counts)
}

/// Latest verdict per (annotator, instance), in first-submission order.
pub fn latest_verdicts(verdicts: &[AnnotationVerdict]) -> Vec<AnnotationVerdict> {
    let mut index: HashMap<(&str, &str), usize> = HashMap::new();
    let mut out: Vec<AnnotationVerdict> = Vec::new();
    for v in verdicts {
        match index.get(&(v.annotator_id.as_str(), v.instance_id.as_str())) {
            Some(&i) => out[i] = v.clone(),
            None => {
                index.insert((&v.annotator_id, &v.instance_id), out.len());
                out.push(v.clone());
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub kappa: Option<f64>,
    pub n_items: usize,
    pub n_raters: usize,
    pub category_counts: BTreeMap<ValidityLabel, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Agreement over the items that carry exactly `n_raters` verdicts.
pub fn agreement_report(verdicts: &[AnnotationVerdict], n_raters: usize) -> AgreementReport {
    let latest = latest_verdicts(verdicts);
    let mut by_item: BTreeMap<&str, Vec<ValidityLabel>> = BTreeMap::new();
    for v in &latest {
        by_item.entry(&v.instance_id).or_default().push(v.label);
    }
    let items: Vec<Vec<ValidityLabel>> = by_item
        .into_values()
        .filter(|labels| labels.len() == n_raters)
        .collect();
    let mut category_counts: BTreeMap<ValidityLabel, usize> =
        ValidityLabel::ALL.iter().map(|l| (*l, 0)).collect();
    for l in items.iter().flatten() {
        *category_counts.entry(*l).or_default() += 1;
    }
    let (kappa, note) = match fleiss_from_labels(&items, &ValidityLabel::ALL) {
        Ok(k) => (Some(k), None),
        Err(e) => (None, Some(e.to_string())),
    };
    AgreementReport {
        kappa,
        n_items: items.len(),
        n_raters,
        category_counts,
        note,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub kept_ids: Vec<String>,
    pub dropped_ids: Vec<String>,
    /// Dropped items keyed by the worst label they received.
    pub per_reason: BTreeMap<ValidityLabel, usize>,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum FilterError {
    #[error("{} instance(s) lack the required verdicts: {}", .0.len(), .0.join(", "))]
    Incomplete(Vec<String>),
}

/// Keeps an instance iff every verdict on it is Valid. Each record must carry
/// at least `required_raters` distinct annotators' verdicts.
pub fn filter_dataset(
    records: &[DatasetRecord],
    verdicts: &[AnnotationVerdict],
    required_raters: usize,
) -> Result<FilterReport, FilterError> {
    let latest = latest_verdicts(verdicts);
    let mut by_item: HashMap<&str, Vec<ValidityLabel>> = HashMap::new();
    for v in &latest {
        by_item.entry(&v.instance_id).or_default().push(v.label);
    }
    let incomplete: Vec<String> = records
        .iter()
        .filter(|r| by_item.get(r.id()).map_or(0, Vec::len) < required_raters)
        .map(|r| r.id().to_string())
        .collect();
    if !incomplete.is_empty() {
        return Err(FilterError::Incomplete(incomplete));
    }
    let mut report = FilterReport {
        kept_ids: Vec::new(),
        dropped_ids: Vec::new(),
        per_reason: BTreeMap::new(),
    };
    for r in records {
        let worst = by_item[r.id()].iter().max().copied().unwrap_or(ValidityLabel::Valid);
        if worst == ValidityLabel::Valid {
            report.kept_ids.push(r.id().to_string());
        } else {
            report.dropped_ids.push(r.id().to_string());
            *report.per_reason.entry(worst).or_default() += 1;
        }
    }
    Ok(report)
}
