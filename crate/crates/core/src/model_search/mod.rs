//! Budgeted genetic search over small ML pipelines (scaler → feature
//! reducer → model) for expert-score classification and questionnaire
//! factor regression, plus the metric suite and cross-validation splits.

mod ga;
pub mod metrics;
pub mod models;

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ga::{evolve_pipelines, random_search, EvalRecord, GenerationStats, SearchBudget, SearchResult, StopReason};
pub use metrics::{classification_metrics, regression_metrics, MetricsClassification, MetricsRegression};
use models::{fit_reducer, model_gene, select_columns, FittedModel, Matrix, ModelGene, ReducerGene, Scaler, ScalerGene};

use crate::seeds;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("truth is constant; R² is undefined")]
    ConstantTruth,
    #[error("need 2 <= folds <= n, got folds = {folds}, n = {n}")]
    TooFewSamples { n: usize, folds: usize },
    #[error("budget {budget} smaller than population {population}")]
    BudgetTooSmall { budget: usize, population: usize },
    #[error("feature dimension {found} differs from {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("model gene does not match the task")]
    TaskMismatch,
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("model artifact: {0}")]
    Artifact(String),
}

pub type Result<T> = std::result::Result<T, SearchError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Targets {
    /// Class ids `0..n_classes`.
    Classes(Vec<usize>),
    /// Regression targets on the normalized [0, 1] scale.
    Values(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn task(&self) -> Task {
        match self {
            Targets::Classes(_) => Task::Classification,
            Targets::Values(_) => Task::Regression,
        }
    }

    pub fn subset(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Classes(c) => Targets::Classes(idx.iter().map(|&i| c[i]).collect()),
            Targets::Values(v) => Targets::Values(idx.iter().map(|&i| v[i]).collect()),
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            Targets::Classes(c) => c.iter().max().map_or(0, |m| m + 1),
            Targets::Values(_) => 0,
        }
    }
}

/// Index-coded genome: scaler, reducer, model and seed-derivation genes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GenomeCode(pub [u8; 4]);

/// Size of each gene's domain, in gene order.
pub const GENE_DOMAINS: [u8; 4] = [3, 4, models::MODEL_DOMAIN as u8, models::SEED_DOMAIN];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineGenome {
    pub scaler: ScalerGene,
    pub reducer: ReducerGene,
    pub model: ModelGene,
    pub seed_index: u8,
    pub code: GenomeCode,
}

impl GenomeCode {
    pub fn decode(self, task: Task) -> PipelineGenome {
        let [s, r, m, k] = self.0;
        PipelineGenome {
            scaler: models::SCALERS[s as usize],
            reducer: models::REDUCERS[r as usize],
            model: model_gene(task, m as usize),
            seed_index: k,
            code: self,
        }
    }

    pub fn is_valid(self) -> bool {
        self.0.iter().zip(GENE_DOMAINS).all(|(&g, d)| g < d)
    }

    pub fn hash64(self) -> u64 {
        seeds::fnv1a(&self.0)
    }
}

/// Disjoint folds covering `0..n`. With labels, every class is dealt
/// round-robin across folds so per-fold class counts stay within one of
/// proportional.
pub fn kfold_split(n: usize, folds: usize, labels: Option<&[usize]>, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 || folds > n {
        return Err(SearchError::TooFewSamples { n, folds });
    }
    let mut rng = seeds::rng(seed);
    let mut out = vec![Vec::new(); folds];
    match labels {
        None => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            for (pos, i) in idx.into_iter().enumerate() {
                out[pos % folds].push(i);
            }
        }
        Some(labels) => {
            if labels.len() != n {
                return Err(SearchError::LengthMismatch { left: n, right: labels.len() });
            }
            let mut classes: Vec<usize> = labels.to_vec();
            classes.sort_unstable();
            classes.dedup();
            let mut next = 0;
            for c in classes {
                let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
                members.shuffle(&mut rng);
                for i in members {
                    out[next % folds].push(i);
                    next += 1;
                }
            }
        }
    }
    for f in &mut out {
        f.sort_unstable();
    }
    Ok(out)
}

pub const DEFAULT_FOLDS: usize = 5;

fn check_xy(x: &Matrix, y: &Targets) -> Result<usize> {
    if x.is_empty() {
        return Err(SearchError::EmptyInput);
    }
    if x.len() != y.len() {
        return Err(SearchError::LengthMismatch { left: x.len(), right: y.len() });
    }
    let d = x[0].len();
    for r in x {
        if r.len() != d {
            return Err(SearchError::DimensionMismatch { expected: d, found: r.len() });
        }
    }
    Ok(d)
}

/// A genome fitted end to end: scaler, reducer and model state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedPipeline {
    pub genome: PipelineGenome,
    pub task: Task,
    pub input_dim: usize,
    pub n_classes: usize,
    pub scaler: Scaler,
    pub columns: Option<Vec<usize>>,
    pub model: FittedModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Prediction {
    Class(usize),
    Value(f64),
}

impl FittedPipeline {
    pub fn fit(genome: &PipelineGenome, x: &Matrix, y: &Targets, n_classes: usize, seed: u64) -> Result<Self> {
        let input_dim = check_xy(x, y)?;
        let scaler = Scaler::fit(genome.scaler, x);
        let scaled = scaler.transform(x);
        let columns = fit_reducer(genome.reducer, &scaled);
        let reduced = select_columns(&scaled, &columns);
        let model_seed = seeds::derive(seed, genome.code.hash64());
        let model = FittedModel::fit(genome.model, &reduced, y, n_classes, model_seed)?;
        Ok(Self { genome: genome.clone(), task: y.task(), input_dim, n_classes, scaler, columns, model })
    }

    /// Class ids, or regression values clamped to [0, 1].
    pub fn predict(&self, x: &Matrix) -> Result<Vec<Prediction>> {
        for r in x {
            if r.len() != self.input_dim {
                return Err(SearchError::DimensionMismatch { expected: self.input_dim, found: r.len() });
            }
        }
        if x.is_empty() {
            return Ok(Vec::new());
        }
        let reduced = select_columns(&self.scaler.transform(x), &self.columns);
        Ok(self
            .model
            .predict(&reduced)
            .into_iter()
            .map(|v| match self.task {
                Task::Classification => Prediction::Class(v as usize),
                Task::Regression => Prediction::Value(v.clamp(0.0, 1.0)),
            })
            .collect())
    }

    pub fn save<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer(out, self).map_err(|e| SearchError::Artifact(e.to_string()))
    }

    pub fn load<R: Read>(src: R) -> Result<Self> {
        serde_json::from_reader(src).map_err(|e| SearchError::Artifact(e.to_string()))
    }
}

pub fn predictions_as_classes(p: &[Prediction]) -> Vec<usize> {
    p.iter()
        .map(|v| match v {
            Prediction::Class(c) => *c,
            Prediction::Value(v) => *v as usize,
        })
        .collect()
}

pub fn predictions_as_values(p: &[Prediction]) -> Vec<f64> {
    p.iter()
        .map(|v| match v {
            Prediction::Class(c) => *c as f64,
            Prediction::Value(v) => *v,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub test_size: usize,
    /// Macro-F1 (classification) or MAE (regression) on the held-out fold.
    pub score: f64,
    pub accuracy: Option<f64>,
    pub mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvScore {
    /// Mean macro-F1, or negative mean MAE, across folds. Higher is better.
    pub score: f64,
    pub folds: Vec<FoldResult>,
}

/// Cross-validate one genome over precomputed folds. Scaler and reducer
/// statistics are fitted on each training fold only.
pub fn evaluate_with_folds(genome: &PipelineGenome, x: &Matrix, y: &Targets, splits: &[Vec<usize>], seed: u64) -> Result<CvScore> {
    check_xy(x, y)?;
    let n_classes = y.n_classes();
    let mut folds = Vec::with_capacity(splits.len());
    for (f, test) in splits.iter().enumerate() {
        let train: Vec<usize> = (0..x.len()).filter(|i| test.binary_search(i).is_err()).collect();
        let xt: Matrix = train.iter().map(|&i| x[i].clone()).collect();
        let xv: Matrix = test.iter().map(|&i| x[i].clone()).collect();
        let pipe = FittedPipeline::fit(genome, &xt, &y.subset(&train), n_classes, seeds::derive(seed, f as u64))?;
        let pred = pipe.predict(&xv)?;
        let result = match y.subset(test) {
            Targets::Classes(truth) => {
                let m = classification_metrics(&truth, &predictions_as_classes(&pred))?;
                FoldResult { fold: f, test_size: test.len(), score: m.f1, accuracy: Some(m.accuracy), mse: None }
            }
            Targets::Values(truth) => {
                let p = predictions_as_values(&pred);
                FoldResult {
                    fold: f,
                    test_size: test.len(),
                    score: metrics::mean_absolute_error(&truth, &p),
                    accuracy: None,
                    mse: Some(metrics::mean_squared_error(&truth, &p)),
                }
            }
        };
        folds.push(result);
    }
    let mean = folds.iter().map(|f| f.score).sum::<f64>() / folds.len() as f64;
    let score = match y.task() {
        Task::Classification => mean,
        Task::Regression => -mean,
    };
    Ok(CvScore { score, folds })
}

/// Stratified (classification) or plain (regression) k-fold CV of one genome.
pub fn evaluate_pipeline(genome: &PipelineGenome, x: &Matrix, y: &Targets, folds: usize, seed: u64) -> Result<CvScore> {
    check_xy(x, y)?;
    let splits = cv_splits(y, folds, seed)?;
    evaluate_with_folds(genome, x, y, &splits, seed)
}

pub fn cv_splits(y: &Targets, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let split_seed = seeds::derive_named(seed, "folds");
    match y {
        Targets::Classes(c) => kfold_split(c.len(), folds, Some(c), split_seed),
        Targets::Values(v) => kfold_split(v.len(), folds, None, split_seed),
    }
}
