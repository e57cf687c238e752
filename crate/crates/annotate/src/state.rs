//! Assignment, verdict index and derived views. Pure state; the HTTP layer
//! and the journal sit on top.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use winoforge_core::agreement::{agreement_report, filter_dataset, AgreementReport, AnnotationVerdict, FilterReport};
use winoforge_core::dataset::{DatasetRecord, ValiditySource};
use winoforge_core::schema::{token_diff, DiffEntry, ValidityLabel, Violation, WscInstance};

use crate::journal::JournalEntry;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum AnnotateError {
    #[error("unknown annotator `{0}`")]
    UnknownAnnotator(String),
    #[error("unknown instance `{0}`")]
    UnknownInstance(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotateConfig {
    pub required_raters: usize,
    pub lease: Duration,
    /// When set, only these annotator ids are accepted.
    pub allowlist: Option<BTreeSet<String>>,
}

impl Default for AnnotateConfig {
    fn default() -> Self {
        AnnotateConfig {
            required_raters: 2,
            lease: Duration::minutes(10),
            allowlist: None,
        }
    }
}

/// What an annotator sees for one instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceView {
    pub instance: WscInstance,
    pub structural_violations: Vec<Violation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sibling: Option<WscInstance>,
    /// Word differences against the sibling, positions in the shared tokenization.
    pub diff: Vec<DiffEntry>,
    pub lease_expires_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextInstance {
    Assigned(Box<InstanceView>),
    NoneRemaining,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub saved: bool,
    pub seq: u64,
    pub verdict: AnnotationVerdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replaced: Option<ValidityLabel>,
    /// Journal entries for this (annotator, instance), including this one.
    pub audit_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub total: usize,
    pub required_raters: usize,
    /// Instances with verdicts from at least `required_raters` annotators.
    pub fully_annotated: usize,
    pub labeled_by: BTreeMap<String, usize>,
    /// Label counts as each annotator saw them.
    pub per_annotator: BTreeMap<String, BTreeMap<ValidityLabel, usize>>,
    /// Fully annotated instances by the worst label any annotator gave.
    pub unanimous_view: BTreeMap<ValidityLabel, usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterView {
    pub report: FilterReport,
    /// Instances still short of `required_raters` verdicts.
    pub pending_ids: Vec<String>,
}

struct Lease {
    annotator: String,
    expires: DateTime<Utc>,
}

pub struct Annotations {
    config: AnnotateConfig,
    records: Vec<DatasetRecord>,
    index: HashMap<String, usize>,
    siblings: HashMap<String, usize>,
    latest: HashMap<(String, String), AnnotationVerdict>,
    audit: HashMap<(String, String), usize>,
    /// Verdicts in journal order, for views that need a stable ordering.
    order: Vec<(String, String)>,
    leases: HashMap<String, Vec<Lease>>,
}

impl Annotations {
    pub fn new(records: Vec<DatasetRecord>, config: AnnotateConfig) -> Self {
        let index: HashMap<String, usize> = records.iter().enumerate().map(|(i, r)| (r.id().to_string(), i)).collect();
        let mut by_pair: HashMap<&str, Vec<usize>> = HashMap::new();
        for (i, r) in records.iter().enumerate() {
            if let Some(p) = &r.instance.pair_id {
                by_pair.entry(p).or_default().push(i);
            }
        }
        let mut siblings = HashMap::new();
        for group in by_pair.values().filter(|g| g.len() == 2) {
            siblings.insert(records[group[0]].id().to_string(), group[1]);
            siblings.insert(records[group[1]].id().to_string(), group[0]);
        }
        Annotations {
            config,
            records,
            index,
            siblings,
            latest: HashMap::new(),
            audit: HashMap::new(),
            order: Vec::new(),
            leases: HashMap::new(),
        }
    }

    pub fn config(&self) -> &AnnotateConfig {
        &self.config
    }

    pub fn records(&self) -> &[DatasetRecord] {
        &self.records
    }

    pub fn check_annotator(&self, annotator: &str) -> Result<(), AnnotateError> {
        let ok = !annotator.trim().is_empty()
            && self.config.allowlist.as_ref().is_none_or(|a| a.contains(annotator));
        if ok {
            Ok(())
        } else {
            Err(AnnotateError::UnknownAnnotator(annotator.to_string()))
        }
    }

    pub fn check_instance(&self, id: &str) -> Result<(), AnnotateError> {
        if self.index.contains_key(id) {
            Ok(())
        } else {
            Err(AnnotateError::UnknownInstance(id.to_string()))
        }
    }

    /// Replays a journal entry. Entries for instances no longer in the
    /// dataset are ignored.
    pub fn apply(&mut self, entry: &JournalEntry) {
        let v = &entry.verdict;
        if !self.index.contains_key(&v.instance_id) {
            tracing::warn!(instance = %v.instance_id, "journal verdict for unknown instance ignored");
            return;
        }
        let key = (v.annotator_id.clone(), v.instance_id.clone());
        if self.latest.insert(key.clone(), v.clone()).is_none() {
            self.order.push(key.clone());
        }
        *self.audit.entry(key).or_default() += 1;
        if let Some(ls) = self.leases.get_mut(&v.instance_id) {
            ls.retain(|l| l.annotator != v.annotator_id);
        }
    }

    pub fn current_label(&self, annotator: &str, instance: &str) -> Option<ValidityLabel> {
        self.latest
            .get(&(annotator.to_string(), instance.to_string()))
            .map(|v| v.label)
    }

    pub fn audit_len(&self, annotator: &str, instance: &str) -> usize {
        self.audit
            .get(&(annotator.to_string(), instance.to_string()))
            .copied()
            .unwrap_or(0)
    }

    /// Distinct annotators with a verdict on `instance`.
    pub fn raters(&self, instance: &str) -> usize {
        self.latest.keys().filter(|(_, i)| i == instance).count()
    }

    fn rater_counts(&self) -> HashMap<&str, usize> {
        let mut m: HashMap<&str, usize> = HashMap::new();
        for (_, i) in self.latest.keys() {
            *m.entry(i.as_str()).or_default() += 1;
        }
        m
    }

    /// First instance in dataset order that `annotator` has not labeled and
    /// that still needs raters once other annotators' live leases are counted.
    /// Asking again while holding a lease returns the same instance.
    pub fn next_unlabeled(&mut self, annotator: &str, now: DateTime<Utc>) -> Result<NextInstance, AnnotateError> {
        self.check_annotator(annotator)?;
        for ls in self.leases.values_mut() {
            ls.retain(|l| l.expires > now);
        }
        let counts = self.rater_counts();
        let mut pick = None;
        for (i, r) in self.records.iter().enumerate() {
            let id = r.id();
            if self.latest.contains_key(&(annotator.to_string(), id.to_string())) {
                continue;
            }
            let leases = self.leases.get(id).map(Vec::as_slice).unwrap_or(&[]);
            if leases.iter().any(|l| l.annotator == annotator) {
                pick = Some(i);
                break;
            }
            let claimed = counts.get(id).copied().unwrap_or(0) + leases.len();
            if claimed < self.config.required_raters {
                pick = Some(i);
                break;
            }
        }
        let Some(i) = pick else {
            return Ok(NextInstance::NoneRemaining);
        };
        let rec = &self.records[i];
        let expires = now + self.config.lease;
        let ls = self.leases.entry(rec.id().to_string()).or_default();
        ls.retain(|l| l.annotator != annotator);
        ls.push(Lease { annotator: annotator.to_string(), expires });
        let sibling = self.siblings.get(rec.id()).map(|&j| self.records[j].instance.clone());
        let diff = sibling
            .as_ref()
            .map(|s| token_diff(&rec.instance.sentence, &s.sentence))
            .unwrap_or_default();
        Ok(NextInstance::Assigned(Box::new(InstanceView {
            instance: rec.instance.clone(),
            structural_violations: rec.structural_violations.clone(),
            sibling,
            diff,
            lease_expires_at: expires,
        })))
    }

    /// Latest verdicts in first-submission order.
    pub fn verdicts(&self) -> Vec<AnnotationVerdict> {
        self.order.iter().map(|k| self.latest[k].clone()).collect()
    }

    pub fn progress(&self) -> Progress {
        let counts = self.rater_counts();
        let mut labeled_by: BTreeMap<String, usize> = BTreeMap::new();
        let mut per_annotator: BTreeMap<String, BTreeMap<ValidityLabel, usize>> = BTreeMap::new();
        for ((a, _), v) in &self.latest {
            *labeled_by.entry(a.clone()).or_default() += 1;
            *per_annotator
                .entry(a.clone())
                .or_insert_with(|| ValidityLabel::ALL.iter().map(|l| (*l, 0)).collect())
                .entry(v.label)
                .or_default() += 1;
        }
        let mut worst: HashMap<&str, ValidityLabel> = HashMap::new();
        for ((_, i), v) in &self.latest {
            let w = worst.entry(i.as_str()).or_insert(v.label);
            *w = (*w).max(v.label);
        }
        let mut unanimous_view: BTreeMap<ValidityLabel, usize> = ValidityLabel::ALL.iter().map(|l| (*l, 0)).collect();
        let mut fully = 0;
        for r in &self.records {
            if counts.get(r.id()).copied().unwrap_or(0) >= self.config.required_raters {
                fully += 1;
                *unanimous_view.entry(worst[r.id()]).or_default() += 1;
            }
        }
        Progress {
            total: self.records.len(),
            required_raters: self.config.required_raters,
            fully_annotated: fully,
            labeled_by,
            per_annotator,
            unanimous_view,
        }
    }

    pub fn agreement(&self) -> AgreementReport {
        agreement_report(&self.verdicts(), self.config.required_raters)
    }

    /// Filter over the fully annotated instances; the rest are listed as pending.
    pub fn filter_view(&self) -> FilterView {
        let counts = self.rater_counts();
        let (done, pending): (Vec<&DatasetRecord>, Vec<&DatasetRecord>) = self
            .records
            .iter()
            .partition(|r| counts.get(r.id()).copied().unwrap_or(0) >= self.config.required_raters);
        let done: Vec<DatasetRecord> = done.into_iter().cloned().collect();
        let report = filter_dataset(&done, &self.verdicts(), self.config.required_raters)
            .expect("only fully annotated records are filtered");
        FilterView {
            report,
            pending_ids: pending.into_iter().map(|r| r.id().to_string()).collect(),
        }
    }

    /// Kept records with their verdicts attached and annotation-sourced validity.
    pub fn filtered_records(&self) -> Vec<DatasetRecord> {
        let view = self.filter_view();
        let kept: HashSet<&str> = view.report.kept_ids.iter().map(String::as_str).collect();
        let verdicts = self.verdicts();
        self.records
            .iter()
            .filter(|r| kept.contains(r.id()))
            .map(|r| {
                let mut r = r.clone();
                r.annotations = verdicts.iter().filter(|v| v.instance_id == r.id()).cloned().collect();
                r.validity = Some(ValidityLabel::Valid);
                r.validity_source = Some(ValiditySource::Annotation);
                r
            })
            .collect()
    }
}
