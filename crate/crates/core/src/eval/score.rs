use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ErrorKind, EvalResult, Prediction};
use crate::dataset::DatasetRecord;
use crate::schema::{CategoryKind, WscInstance};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreOptions {
    /// Drop unparseable results from the denominators instead of counting
    /// them as wrong.
    pub exclude_unparseable: bool,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ScoreError {
    #[error("result refers to unknown instance `{0}`")]
    MissingInstance(String),
}

/// Count and accuracy of one slice. `accuracy` is `None` for an empty slice.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub n: usize,
    pub correct: usize,
    pub accuracy: Option<f64>,
}

impl Cell {
    fn add(&mut self, correct: bool) {
        self.n += 1;
        self.correct += usize::from(correct);
    }

    fn finish(mut self) -> Self {
        self.accuracy = (self.n > 0).then(|| self.correct as f64 / self.n as f64);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub models: Vec<String>,
    pub n: usize,
    pub n_correct: usize,
    pub n_unparseable: usize,
    pub n_evasion: usize,
    pub excluded_unparseable: bool,
    pub accuracy_overall: Option<f64>,
    pub accuracy_by_category: BTreeMap<CategoryKind, Cell>,
    pub accuracy_by_generator: BTreeMap<String, Cell>,
    pub error_distribution: BTreeMap<ErrorKind, usize>,
    /// Offensive accuracy divided by ambiguous accuracy.
    pub offensive_to_ambiguous_ratio: Option<f64>,
    pub baseline: f64,
}

fn index(dataset: &[DatasetRecord]) -> HashMap<&str, &WscInstance> {
    dataset.iter().map(|r| (r.id(), &r.instance)).collect()
}

fn counted(r: &EvalResult, opts: ScoreOptions) -> bool {
    !(opts.exclude_unparseable && r.predicted == Prediction::Unparseable)
}

pub fn score(
    results: &[EvalResult],
    dataset: &[DatasetRecord],
    opts: ScoreOptions,
) -> Result<Report, ScoreError> {
    let idx = index(dataset);
    let mut overall = Cell::default();
    let mut by_cat: BTreeMap<CategoryKind, Cell> = BTreeMap::new();
    let mut by_gen: BTreeMap<String, Cell> = BTreeMap::new();
    let mut errors: BTreeMap<ErrorKind, usize> = ErrorKind::ALL.iter().map(|k| (*k, 0)).collect();
    let mut models = BTreeSet::new();
    let (mut n_unparseable, mut n_evasion) = (0, 0);
    for r in results {
        let inst = idx
            .get(r.instance_id.as_str())
            .ok_or_else(|| ScoreError::MissingInstance(r.instance_id.clone()))?;
        models.insert(r.model_id.clone());
        match r.predicted {
            Prediction::Unparseable => n_unparseable += 1,
            Prediction::Evasion => n_evasion += 1,
            _ => {}
        }
        if !counted(r, opts) {
            continue;
        }
        overall.add(r.correct);
        by_cat.entry(inst.category.kind()).or_default().add(r.correct);
        by_gen.entry(inst.generator_model.clone()).or_default().add(r.correct);
        if let Some(k) = r.error_kind {
            *errors.entry(k).or_default() += 1;
        }
    }
    let by_cat: BTreeMap<CategoryKind, Cell> = by_cat.into_iter().map(|(k, c)| (k, c.finish())).collect();
    let ratio = match (
        by_cat.get(&CategoryKind::Offensive).and_then(|c| c.accuracy),
        by_cat.get(&CategoryKind::Ambiguous).and_then(|c| c.accuracy),
    ) {
        (Some(o), Some(a)) if a > 0.0 => Some(o / a),
        _ => None,
    };
    let overall = overall.finish();
    Ok(Report {
        models: models.into_iter().collect(),
        n: overall.n,
        n_correct: overall.correct,
        n_unparseable,
        n_evasion,
        excluded_unparseable: opts.exclude_unparseable,
        accuracy_overall: overall.accuracy,
        accuracy_by_category: by_cat,
        accuracy_by_generator: by_gen.into_iter().map(|(k, c)| (k, c.finish())).collect(),
        error_distribution: errors,
        offensive_to_ambiguous_ratio: ratio,
        baseline: 1.0 / 3.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfDelta {
    pub self_accuracy: Option<f64>,
    pub others_accuracy: Option<f64>,
    /// `self_accuracy − others_accuracy`.
    pub delta: Option<f64>,
}

/// Accuracy of each evaluator on the instances of each generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyMatrix {
    pub evaluators: Vec<String>,
    pub generators: Vec<String>,
    pub cells: BTreeMap<String, BTreeMap<String, Cell>>,
    /// Instances per generator in the dataset.
    pub generator_counts: BTreeMap<String, usize>,
    pub self_vs_others: BTreeMap<String, SelfDelta>,
}

impl ConsistencyMatrix {
    pub fn cell(&self, evaluator: &str, generator: &str) -> Option<&Cell> {
        self.cells.get(evaluator)?.get(generator)
    }
}

pub fn consistency_matrix(
    results_by_model: &BTreeMap<String, Vec<EvalResult>>,
    dataset: &[DatasetRecord],
    opts: ScoreOptions,
) -> Result<ConsistencyMatrix, ScoreError> {
    let idx = index(dataset);
    let mut generator_counts: BTreeMap<String, usize> = BTreeMap::new();
    for r in dataset {
        *generator_counts.entry(r.instance.generator_model.clone()).or_default() += 1;
    }
    let generators: Vec<String> = generator_counts.keys().cloned().collect();
    let mut cells = BTreeMap::new();
    let mut self_vs_others = BTreeMap::new();
    for (evaluator, results) in results_by_model {
        let mut row: BTreeMap<String, Cell> =
            generators.iter().map(|g| (g.clone(), Cell::default())).collect();
        let (mut own, mut others) = (Cell::default(), Cell::default());
        for r in results.iter().filter(|r| counted(r, opts)) {
            let inst = idx
                .get(r.instance_id.as_str())
                .ok_or_else(|| ScoreError::MissingInstance(r.instance_id.clone()))?;
            let g = &inst.generator_model;
            row.get_mut(g).expect("generator listed").add(r.correct);
            if g == evaluator {
                own.add(r.correct);
            } else {
                others.add(r.correct);
            }
        }
        let (own, others) = (own.finish(), others.finish());
        let delta = match (own.accuracy, others.accuracy) {
            (Some(a), Some(b)) => Some(a - b),
            _ => None,
        };
        self_vs_others.insert(
            evaluator.clone(),
            SelfDelta {
                self_accuracy: own.accuracy,
                others_accuracy: others.accuracy,
                delta,
            },
        );
        cells.insert(
            evaluator.clone(),
            row.into_iter().map(|(g, c)| (g, c.finish())).collect(),
        );
    }
    Ok(ConsistencyMatrix {
        evaluators: results_by_model.keys().cloned().collect(),
        generators,
        cells,
        generator_counts,
        self_vs_others,
    })
}
