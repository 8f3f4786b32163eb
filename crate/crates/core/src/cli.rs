//! Command-line orchestration.
//!
//! Every subcommand reads a [`RunConfig`] assembled from an optional
//! `key=value` file and command-line flags (flags win), runs one or more
//! stages and writes JSON reports under the output directory. Data errors
//! exit with status 1 and a JSON error document on stderr; usage errors exit
//! with status 2.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autoencoder::{self, AEHyper, Checkpoint, GridCandidate, MovementVector};
use crate::clustering::{self, ClusterAnalysis};
use crate::model_search::{
    self, classification_metrics, evaluate_with_folds, evolve_pipelines, regression_metrics, FittedPipeline, FoldResult,
    GenerationStats, MetricsClassification, StopReason, MetricsRegression, PipelineGenome, Prediction, SearchBudget, Targets,
};
use crate::preprocess::{self, SampleTensor};
use crate::seeds;
use crate::stats::{self, CrossTab, SignClass, UTestResult};
use crate::synthetic::{self, DatasetConfig, GenConfig, ProfileKind};
use crate::trajectory_io::{self, CbarqFactor, RawTrial, ScoreRecord, CBARQ_MAX};

pub const THREADS_ENV: &str = "TRAILMARK_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliError {
    pub stage: String,
    pub kind: String,
    pub message: String,
}

impl CliError {
    pub fn new(stage: &str, kind: &str, message: impl ToString) -> Self {
        Self { stage: stage.into(), kind: kind.into(), message: message.to_string() }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}: {}", self.stage, self.kind, self.message)
    }
}

impl std::error::Error for CliError {}

pub type Result<T> = std::result::Result<T, CliError>;

fn err_kind<E: std::fmt::Debug>(e: &E) -> String {
    let s = format!("{e:?}");
    s.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("Error").to_string()
}

trait StageContext<T> {
    fn stage(self, stage: &str) -> Result<T>;
}

impl<T, E: std::fmt::Debug + std::fmt::Display> StageContext<T> for std::result::Result<T, E> {
    fn stage(self, stage: &str) -> Result<T> {
        self.map_err(|e| CliError::new(stage, &err_kind(&e), &e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AeGrid {
    /// c1, c2 ∈ {4, 8}; lr ∈ {1e-2, 1e-3}; epochs ∈ {200, 500}; batch 8.
    Default,
    /// c1 = c2 = 4; lr ∈ {1e-2, 1e-3}; epochs 40; batch 8.
    Quick,
}

impl std::str::FromStr for AeGrid {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "default" => Ok(AeGrid::Default),
            "quick" => Ok(AeGrid::Quick),
            _ => Err(format!("unknown AE grid {s:?} (expected default or quick)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String")]
pub enum SearchTask {
    Score,
    Cbarq(CbarqFactor),
}

impl From<SearchTask> for String {
    fn from(t: SearchTask) -> String {
        t.to_string()
    }
}

impl std::fmt::Display for SearchTask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SearchTask::Score => f.write_str("score"),
            SearchTask::Cbarq(c) => write!(f, "cbarq:{}", c.code()),
        }
    }
}

impl std::str::FromStr for SearchTask {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "score" {
            return Ok(SearchTask::Score);
        }
        match s.strip_prefix("cbarq:") {
            Some(code) => code.parse::<CbarqFactor>().map(SearchTask::Cbarq).map_err(|e| e.to_string()),
            None => Err(format!("unknown task {s:?} (expected score or cbarq:<FACTOR>)")),
        }
    }
}

fn parse_tasks(s: &str) -> std::result::Result<Vec<SearchTask>, String> {
    s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(str::parse).collect()
}

/// Everything a run needs. Paths are excluded from the config hash.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    #[serde(skip)]
    pub trials: Option<PathBuf>,
    #[serde(skip)]
    pub labels: Option<PathBuf>,
    #[serde(skip)]
    pub out: PathBuf,
    pub seed: u64,
    pub fps: f64,
    pub coverage_threshold: f64,
    pub smooth_window: usize,
    pub ae_grid: AeGrid,
    pub ae_epochs: Option<usize>,
    pub holdout_fraction: f64,
    pub kmax: Option<usize>,
    pub restarts: usize,
    pub budget: usize,
    pub population: usize,
    pub folds: usize,
    pub tasks: Vec<SearchTask>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            trials: None,
            labels: None,
            out: PathBuf::from("out"),
            seed: 0,
            fps: preprocess::STANDARD_FPS,
            coverage_threshold: trajectory_io::DEFAULT_COVERAGE_THRESHOLD,
            smooth_window: preprocess::DEFAULT_SMOOTH_WINDOW,
            ae_grid: AeGrid::Default,
            ae_epochs: None,
            holdout_fraction: 0.2,
            kmax: None,
            restarts: clustering::DEFAULT_RESTARTS,
            budget: SearchBudget::default().max_evaluations,
            population: SearchBudget::default().population,
            folds: model_search::DEFAULT_FOLDS,
            tasks: vec![SearchTask::Score],
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| CliError::new("config", "InvalidValue", format!("{key} = {value:?}: {e}")))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim().replace('-', "_").as_str() {
            "trials" => self.trials = Some(PathBuf::from(value)),
            "labels" => self.labels = Some(PathBuf::from(value)),
            "out" => self.out = PathBuf::from(value),
            "seed" => self.seed = parse_value(key, value)?,
            "fps" => self.fps = parse_value(key, value)?,
            "coverage_threshold" => self.coverage_threshold = parse_value(key, value)?,
            "smooth_window" => self.smooth_window = parse_value(key, value)?,
            "ae_grid" => self.ae_grid = parse_value(key, value)?,
            "ae_epochs" => self.ae_epochs = Some(parse_value(key, value)?),
            "holdout_fraction" => self.holdout_fraction = parse_value(key, value)?,
            "kmax" => self.kmax = Some(parse_value(key, value)?),
            "restarts" => self.restarts = parse_value(key, value)?,
            "budget" => self.budget = parse_value(key, value)?,
            "population" => self.population = parse_value(key, value)?,
            "folds" => self.folds = parse_value(key, value)?,
            "task" | "tasks" => {
                self.tasks = parse_tasks(value).map_err(|e| CliError::new("config", "InvalidValue", e))?;
            }
            other => return Err(CliError::new("config", "UnknownKey", format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Apply a flat `key=value` document; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::new("config", "Syntax", format!("line {}: expected key=value", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::new("config", "OutOfRange", m));
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad(format!("fps {} must be positive", self.fps));
        }
        if !(0.0..=1.0).contains(&self.coverage_threshold) {
            return bad(format!("coverage_threshold {} outside [0, 1]", self.coverage_threshold));
        }
        if self.smooth_window == 0 || self.smooth_window.is_multiple_of(2) {
            return bad(format!("smooth_window {} must be odd and positive", self.smooth_window));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return bad(format!("holdout_fraction {} outside (0, 1)", self.holdout_fraction));
        }
        if matches!(self.kmax, Some(k) if k < 3) {
            return bad("kmax must be at least 3".into());
        }
        if self.restarts == 0 {
            return bad("restarts must be positive".into());
        }
        if self.population == 0 || self.budget < self.population {
            return bad(format!("budget {} must be at least population {}", self.budget, self.population));
        }
        if self.folds < 2 {
            return bad(format!("folds {} must be at least 2", self.folds));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        seeds::derive_named(self.seed, stage)
    }

    pub fn grid(&self, seed: u64) -> Vec<AEHyper> {
        let mut grid = match self.ae_grid {
            AeGrid::Default => autoencoder::default_grid(seed),
            AeGrid::Quick => [1e-2, 1e-3].iter().map(|&lr| AEHyper::new(4, 4, lr, 40, 8, seed)).collect(),
        };
        if let Some(e) = self.ae_epochs {
            for h in &mut grid {
                h.epochs = e;
            }
        }
        grid
    }
}

#[derive(Debug, Args, Default)]
struct GlobalArgs {
    /// Flat key=value configuration file; flags override it.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Target frame rate after resampling.
    #[arg(long, global = true)]
    fps: Option<f64>,
    #[arg(long, global = true, value_name = "X")]
    coverage_threshold: Option<f64>,
    #[arg(long, global = true)]
    kmax: Option<usize>,
    /// Maximum pipeline evaluations per search.
    #[arg(long, global = true)]
    budget: Option<usize>,
    #[arg(long, global = true)]
    folds: Option<usize>,
    /// `score` or `cbarq:<FACTOR>`; `pipeline` accepts a comma list.
    #[arg(long, global = true, value_name = "NAME")]
    task: Option<String>,
    /// Directory of trial JSON documents.
    #[arg(long, global = true, value_name = "DIR")]
    trials: Option<PathBuf>,
    /// Label CSV.
    #[arg(long, global = true, value_name = "PATH")]
    labels: Option<PathBuf>,
}

#[derive(Debug, Parser)]
#[command(name = "trailmark", version, about = "Trajectory embedding, clustering and pipeline search for behavioral test recordings")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse trial documents and apply the coverage gate.
    Ingest,
    /// Ingest, resample, fill, smooth and truncate into a tensor.
    Preprocess,
    /// Grid-search and train the autoencoder, then encode every trial.
    Embed {
        /// Dataset written by `preprocess` (default: OUT/dataset.json).
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Cluster movement vectors with elbow selection and outlier refit.
    Cluster {
        /// Embeddings written by `embed` (default: OUT/embeddings.json).
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Rater agreement on the label file.
    Agree,
    /// Mann-Whitney U tests of questionnaire factors between clusters.
    Utest {
        /// Cluster report (default: OUT/cluster.json).
        #[arg(long)]
        clusters: Option<PathBuf>,
    },
    /// Genetic pipeline search over movement vectors.
    Search {
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        population: Option<usize>,
    },
    /// Apply a saved pipeline to movement vectors.
    Predict {
        /// Model artifact written by `search`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Generate a labeled synthetic corpus.
    Synth {
        #[arg(long, default_value_t = 25)]
        n_per_profile: usize,
        /// Comma list of neutral, excessive, avoidant.
        #[arg(long, default_value = "neutral,excessive")]
        profiles: String,
        #[arg(long, default_value_t = 60.0)]
        duration: f64,
        #[arg(long, default_value_t = 0.0)]
        missing_rate: f64,
        #[arg(long, default_value_t = 0.1)]
        confusion: f64,
    },
    /// Run every stage and write one consolidated report.
    Pipeline,
}

fn build_config(global: &GlobalArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &global.config {
        let text = fs::read_to_string(path).map_err(|e| CliError::new("config", "Io", format!("{}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    let flags: [(&str, Option<String>); 11] = [
        ("seed", global.seed.map(|v| v.to_string())),
        ("out", global.out.as_ref().map(|p| p.display().to_string())),
        ("fps", global.fps.map(|v| v.to_string())),
        ("coverage_threshold", global.coverage_threshold.map(|v| v.to_string())),
        ("kmax", global.kmax.map(|v| v.to_string())),
        ("budget", global.budget.map(|v| v.to_string())),
        ("folds", global.folds.map(|v| v.to_string())),
        ("task", global.task.clone()),
        ("trials", global.trials.as_ref().map(|p| p.display().to_string())),
        ("labels", global.labels.as_ref().map(|p| p.display().to_string())),
        ("population", None),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
    }
    Ok(cfg)
}

/// Stage report envelope.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report<T> {
    pub stage: String,
    pub config_hash: String,
    pub stage_seed: u64,
    pub result: T,
}

fn envelope<T>(cfg: &RunConfig, stage: &str, result: T) -> Report<T> {
    Report { stage: stage.into(), config_hash: cfg.hash(), stage_seed: cfg.stage_seed(stage), result }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).stage("output")?;
    }
    let text = serde_json::to_string_pretty(value).stage("output")?;
    fs::write(path, text + "\n").map_err(|e| CliError::new("output", "Io", format!("{}: {e}", path.display())))
}

fn read_json<T: for<'de> Deserialize<'de>>(stage: &str, path: &Path) -> Result<T> {
    let f = fs::File::open(path).map_err(|e| CliError::new(stage, "Io", format!("{}: {e}", path.display())))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| CliError::new(stage, "MalformedDocument", format!("{}: {e}", path.display())))
}

// ---- ingest -------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub trial_id: String,
    pub frames: usize,
    pub duration_s: f64,
    pub coverage: f64,
    pub clamped: usize,
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub threshold: f64,
    pub trials: usize,
    pub kept: usize,
    pub excluded: Vec<String>,
    pub coverage: Vec<CoverageRow>,
}

pub fn load_trials(dir: &Path) -> Result<Vec<RawTrial>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::new("ingest", "Io", format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::new("ingest", "EmptyInput", format!("no trial documents in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let f = fs::File::open(p).map_err(|e| CliError::new("ingest", "Io", format!("{}: {e}", p.display())))?;
            trajectory_io::parse_trial(BufReader::new(f))
                .map_err(|e| CliError::new("ingest", &err_kind(&e), format!("{}: {e}", p.display())))
        })
        .collect()
}

pub fn stage_ingest(cfg: &RunConfig, trials: Vec<RawTrial>) -> (IngestReport, Vec<RawTrial>) {
    let coverage: Vec<CoverageRow> = trials
        .iter()
        .map(|t| {
            let c = trajectory_io::detection_coverage(t);
            CoverageRow {
                trial_id: t.trial_id.clone(),
                frames: t.frames.len(),
                duration_s: t.duration_s(),
                coverage: c,
                clamped: t.clamp_count,
                kept: c >= cfg.coverage_threshold,
            }
        })
        .collect();
    let (kept, excluded) = trajectory_io::quality_gate(trials, cfg.coverage_threshold);
    let report = IngestReport {
        threshold: cfg.coverage_threshold,
        trials: coverage.len(),
        kept: kept.len(),
        excluded: excluded.iter().map(|t| t.trial_id.clone()).collect(),
        coverage,
    };
    (report, kept)
}

fn trials_dir(cfg: &RunConfig) -> Result<&Path> {
    cfg.trials.as_deref().ok_or_else(|| CliError::new("config", "MissingValue", "--trials DIR is required"))
}

fn labels_path(cfg: &RunConfig) -> Result<&Path> {
    cfg.labels.as_deref().ok_or_else(|| CliError::new("config", "MissingValue", "--labels PATH is required"))
}

pub fn load_label_file(path: &Path) -> Result<Vec<ScoreRecord>> {
    let f = fs::File::open(path).map_err(|e| CliError::new("labels", "Io", format!("{}: {e}", path.display())))?;
    trajectory_io::load_labels(BufReader::new(f)).stage("labels")
}

// ---- preprocess ---------------------------------------------------------

/// Serialized `(n, 4, m)` tensor with its trial ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub trial_ids: Vec<String>,
    pub fps: f64,
    pub channels: Vec<String>,
    pub shape: (usize, usize, usize),
    pub data: Vec<f64>,
}

impl DatasetFile {
    pub fn tensor(&self) -> Result<SampleTensor> {
        let (n, c, m) = self.shape;
        if n * c * m != self.data.len() || n != self.trial_ids.len() {
            return Err(CliError::new("embed", "ShapeMismatch", format!("shape {:?} vs {} values", self.shape, self.data.len())));
        }
        Ok(SampleTensor { n, channels: c, m, data: self.data.clone() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub fps: f64,
    pub smooth_window: usize,
    pub samples: usize,
    pub m: usize,
    pub shape: (usize, usize, usize),
    pub duration_s: f64,
}

pub fn stage_preprocess(cfg: &RunConfig, kept: &[RawTrial]) -> Result<(PreprocessReport, DatasetFile)> {
    use rayon::prelude::*;
    let series = kept
        .par_iter()
        .map(|t| preprocess::prepare_trial(t, cfg.fps, cfg.smooth_window))
        .collect::<std::result::Result<Vec<_>, _>>()
        .stage("preprocess")?;
    let dataset = preprocess::standardize_lengths(series).stage("preprocess")?;
    let tensor = preprocess::build_matrix(&dataset).stage("preprocess")?;
    let report = PreprocessReport {
        fps: dataset.fps,
        smooth_window: cfg.smooth_window,
        samples: tensor.n,
        m: tensor.m,
        shape: tensor.shape(),
        duration_s: tensor.m as f64 / dataset.fps,
    };
    let file = DatasetFile {
        trial_ids: dataset.samples.iter().map(|s| s.trial_id.clone()).collect(),
        fps: dataset.fps,
        channels: preprocess::CHANNELS.iter().map(|c| c.to_string()).collect(),
        shape: tensor.shape(),
        data: tensor.data,
    };
    Ok((report, file))
}

// ---- embed --------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedReport {
    pub grid: Vec<GridCandidate>,
    pub best: AEHyper,
    pub train_indices: Vec<usize>,
    pub holdout_indices: Vec<usize>,
    /// Per-epoch eval MAE of the final model, trained on every sample.
    pub loss_curve: Vec<f64>,
    pub final_mae: f64,
    pub latent_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingsFile {
    pub relu: bool,
    pub vectors: Vec<MovementVector>,
}

pub fn stage_embed(cfg: &RunConfig, dataset: &DatasetFile) -> Result<(EmbedReport, Checkpoint, EmbeddingsFile)> {
    let tensor = dataset.tensor()?;
    let seed = cfg.stage_seed("embed");
    let search = autoencoder::grid_search_ae(&tensor, &cfg.grid(seed), cfg.holdout_fraction, seed).stage("embed")?;
    let trained = autoencoder::train_autoencoder(&tensor, &search.best).stage("embed")?;
    let vectors = autoencoder::encode(&trained.params, &tensor, &dataset.trial_ids, trained.hyper.relu).stage("embed")?;
    let report = EmbedReport {
        grid: search.candidates,
        best: search.best.clone(),
        train_indices: search.train_indices,
        holdout_indices: search.holdout_indices,
        final_mae: autoencoder::eval_loss(&trained.params, &tensor, trained.hyper.relu).stage("embed")?,
        loss_curve: trained.loss_curve,
        latent_dim: vectors.first().map_or(0, |v| v.values.len()),
    };
    let checkpoint = Checkpoint::new(&trained.hyper, &trained.params, tensor.m);
    Ok((report, checkpoint, EmbeddingsFile { relu: trained.hyper.relu, vectors }))
}

// ---- cluster ------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterMember {
    pub trial_id: String,
    pub cluster: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub kmax: usize,
    pub inertia_by_k: Vec<f64>,
    pub elbow_distances: Vec<f64>,
    pub degenerate_curve: bool,
    pub k: usize,
    pub outliers: Vec<String>,
    pub inertia: f64,
    pub centroids: Vec<Vec<f64>>,
    pub members: Vec<ClusterMember>,
}

pub fn stage_cluster(cfg: &RunConfig, emb: &EmbeddingsFile) -> Result<ClusterReport> {
    let vectors: Vec<Vec<f64>> = emb.vectors.iter().map(|v| v.values.clone()).collect();
    let kmax = cfg.kmax.unwrap_or_else(|| clustering::default_kmax(vectors.len()).max(3));
    let a: ClusterAnalysis =
        clustering::analyze(&vectors, kmax, cfg.stage_seed("cluster"), cfg.restarts, clustering::DEFAULT_MAX_ITER).stage("cluster")?;
    Ok(ClusterReport {
        kmax,
        inertia_by_k: a.inertia_by_k,
        elbow_distances: a.elbow.distances,
        degenerate_curve: a.elbow.degenerate,
        k: a.k,
        outliers: a.outliers.iter().map(|&i| emb.vectors[i].trial_id.clone()).collect(),
        inertia: a.model.inertia,
        centroids: a.model.centroids,
        members: a
            .kept
            .iter()
            .zip(&a.model.assignments)
            .map(|(&i, &c)| ClusterMember { trial_id: emb.vectors[i].trial_id.clone(), cluster: c })
            .collect(),
    })
}

// ---- agree / cross-tab / utest -------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreeReport {
    pub subjects: usize,
    pub percent_agreement: f64,
    pub free_marginal_kappa: f64,
    pub categories: u32,
    pub final_sign_counts: BTreeMap<String, usize>,
    pub no_majority: Vec<String>,
}

pub fn stage_agree(labels: &[ScoreRecord]) -> Result<AgreeReport> {
    let panel: Vec<[SignClass; 3]> = labels.iter().map(ScoreRecord::rater_signs).collect();
    let pa = stats::percent_agreement(&panel).stage("agree")?;
    let mut counts = BTreeMap::new();
    for c in SignClass::ALL {
        counts.insert(c.as_str().to_string(), labels.iter().filter(|l| l.final_sign == Some(c)).count());
    }
    Ok(AgreeReport {
        subjects: labels.len(),
        percent_agreement: pa,
        free_marginal_kappa: stats::free_marginal_kappa(pa, 3),
        categories: 3,
        final_sign_counts: counts,
        no_majority: labels.iter().filter(|l| l.final_sign.is_none()).map(|l| l.trial_id.clone()).collect(),
    })
}

pub fn stage_crosstab(clusters: &ClusterReport, labels: &[ScoreRecord]) -> Result<CrossTab> {
    let by_id: BTreeMap<&str, &ScoreRecord> = labels.iter().map(|l| (l.trial_id.as_str(), l)).collect();
    let (assign, signs): (Vec<usize>, Vec<SignClass>) = clusters
        .members
        .iter()
        .filter_map(|m| Some((m.cluster, by_id.get(m.trial_id.as_str())?.final_sign?)))
        .unzip();
    stats::cross_tab(&assign, &signs).stage("crosstab")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorTest {
    pub factor: String,
    pub median_a: f64,
    pub median_b: f64,
    pub test: UTestResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtestReport {
    /// The two largest clusters, lower id first.
    pub clusters: (usize, usize),
    pub tests: Vec<FactorTest>,
}

pub fn stage_utest(clusters: &ClusterReport, labels: &[ScoreRecord]) -> Result<UtestReport> {
    let mut sizes = vec![0usize; clusters.k];
    for m in &clusters.members {
        sizes[m.cluster] += 1;
    }
    let mut order: Vec<usize> = (0..clusters.k).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    if order.len() < 2 {
        return Err(CliError::new("utest", "DegenerateData", "need at least two clusters"));
    }
    let (a, b) = (order[0].min(order[1]), order[0].max(order[1]));
    let by_id: BTreeMap<&str, &ScoreRecord> = labels.iter().map(|l| (l.trial_id.as_str(), l)).collect();
    let mut tests = Vec::new();
    for f in CbarqFactor::ALL {
        let values = |c: usize| -> Vec<f64> {
            clusters
                .members
                .iter()
                .filter(|m| m.cluster == c)
                .filter_map(|m| Some(by_id.get(m.trial_id.as_str())?.cbarq.as_ref()?.get(f)))
                .collect()
        };
        let (va, vb) = (values(a), values(b));
        let test = stats::mann_whitney(&va, &vb).stage("utest")?;
        tests.push(FactorTest {
            factor: f.code().to_string(),
            median_a: stats::median(&va).unwrap_or(f64::NAN),
            median_b: stats::median(&vb).unwrap_or(f64::NAN),
            test,
        });
    }
    Ok(UtestReport { clusters: (a, b), tests })
}

// ---- search / predict ---------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub task: String,
    /// Class names by id (classification only).
    pub classes: Vec<String>,
    pub config_hash: String,
    pub pipeline: FittedPipeline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub task: String,
    pub samples: usize,
    pub features: usize,
    pub classes: Vec<String>,
    pub budget: SearchBudget,
    pub folds: usize,
    pub evaluations: usize,
    pub stop_reason: StopReason,
    pub generations: Vec<GenerationStats>,
    pub best_genome: PipelineGenome,
    /// Mean macro-F1, or negative mean MAE on the normalized scale.
    pub best_cv_score: f64,
    pub cv_folds: Vec<FoldResult>,
    pub cv_accuracy: Option<f64>,
    pub cv_mae: Option<f64>,
    pub cv_mae_raw_scale: Option<f64>,
    pub refit_classification: Option<MetricsClassification>,
    pub refit_regression: Option<MetricsRegression>,
}

/// Trial ids, feature rows, targets and class names.
pub type SearchData = (Vec<String>, Vec<Vec<f64>>, Targets, Vec<String>);

/// Features and targets aligned by trial id. Trials without a usable label
/// are skipped.
pub fn search_data(task: &SearchTask, emb: &EmbeddingsFile, labels: &[ScoreRecord]) -> Result<SearchData> {
    let by_id: BTreeMap<&str, &ScoreRecord> = labels.iter().map(|l| (l.trial_id.as_str(), l)).collect();
    let mut ids = Vec::new();
    let mut x = Vec::new();
    match task {
        SearchTask::Score => {
            let mut raw = Vec::new();
            for v in &emb.vectors {
                if let Some(s) = by_id.get(v.trial_id.as_str()).and_then(|l| l.final_sign) {
                    ids.push(v.trial_id.clone());
                    x.push(v.values.clone());
                    raw.push(s);
                }
            }
            let mut present: Vec<SignClass> = raw.clone();
            present.sort();
            present.dedup();
            let y = raw.iter().map(|s| present.binary_search(s).expect("present")).collect();
            Ok((ids, x, Targets::Classes(y), present.iter().map(|s| s.as_str().to_string()).collect()))
        }
        SearchTask::Cbarq(f) => {
            let mut y = Vec::new();
            for v in &emb.vectors {
                if let Some(c) = by_id.get(v.trial_id.as_str()).and_then(|l| l.cbarq.as_ref()) {
                    ids.push(v.trial_id.clone());
                    x.push(v.values.clone());
                    y.push(c.get(*f) / CBARQ_MAX);
                }
            }
            Ok((ids, x, Targets::Values(y), Vec::new()))
        }
    }
}

pub struct SearchOutcome {
    pub report: SearchReport,
    pub artifact: ModelArtifact,
    pub result: model_search::SearchResult,
}

pub fn stage_search(cfg: &RunConfig, task: &SearchTask, emb: &EmbeddingsFile, labels: &[ScoreRecord]) -> Result<SearchOutcome> {
    let (ids, x, y, classes) = search_data(task, emb, labels)?;
    if ids.is_empty() {
        return Err(CliError::new("search", "EmptyInput", format!("no labeled samples for task {task}")));
    }
    let seed = seeds::derive_named(cfg.stage_seed("search"), &task.to_string());
    let budget = SearchBudget::new(cfg.budget, cfg.population);
    let result = evolve_pipelines(&x, &y, budget, cfg.folds, seed).stage("search")?;
    let splits = model_search::cv_splits(&y, cfg.folds, seed).stage("search")?;
    let cv = evaluate_with_folds(&result.best, &x, &y, &splits, seeds::derive(seed, result.best.code.hash64())).stage("search")?;
    let pipeline = FittedPipeline::fit(&result.best, &x, &y, y.n_classes(), seeds::derive_named(seed, "refit")).stage("search")?;
    let pred = pipeline.predict(&x).stage("search")?;
    let mean = |f: &dyn Fn(&FoldResult) -> Option<f64>| -> Option<f64> {
        let v: Vec<f64> = cv.folds.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let (refit_classification, refit_regression, cv_mae) = match &y {
        Targets::Classes(t) => {
            (Some(classification_metrics(t, &model_search::predictions_as_classes(&pred)).stage("search")?), None, None)
        }
        Targets::Values(t) => {
            let p = model_search::predictions_as_values(&pred);
            let m = regression_metrics(t, &p).ok();
            (None, m, mean(&|f| Some(f.score)))
        }
    };
    let report = SearchReport {
        task: task.to_string(),
        samples: ids.len(),
        features: x[0].len(),
        classes: classes.clone(),
        budget,
        folds: cfg.folds,
        evaluations: result.evaluations,
        stop_reason: result.stop_reason.clone(),
        generations: result.generations.clone(),
        best_genome: result.best.clone(),
        best_cv_score: result.best_score,
        cv_accuracy: mean(&|f| f.accuracy),
        cv_mae,
        cv_mae_raw_scale: cv_mae.map(|m| m * CBARQ_MAX),
        cv_folds: cv.folds,
        refit_classification,
        refit_regression,
    };
    let artifact = ModelArtifact { task: task.to_string(), classes, config_hash: cfg.hash(), pipeline };
    Ok(SearchOutcome { report, artifact, result })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub trial_id: String,
    pub prediction: serde_json::Value,
}

pub fn stage_predict(artifact: &ModelArtifact, emb: &EmbeddingsFile) -> Result<Vec<PredictionRow>> {
    let x: Vec<Vec<f64>> = emb.vectors.iter().map(|v| v.values.clone()).collect();
    let pred = artifact.pipeline.predict(&x).stage("predict")?;
    Ok(emb
        .vectors
        .iter()
        .zip(pred)
        .map(|(v, p)| {
            let prediction = match p {
                Prediction::Class(c) => serde_json::json!(artifact.classes.get(c).cloned().unwrap_or_else(|| c.to_string())),
                Prediction::Value(v) => serde_json::json!({ "normalized": v, "raw": v * CBARQ_MAX }),
            };
            PredictionRow { trial_id: v.trial_id.clone(), prediction }
        })
        .collect())
}

// ---- pipeline -----------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineReport {
    pub config_hash: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub stage_seeds: BTreeMap<String, u64>,
    pub ingest: IngestReport,
    pub preprocess: PreprocessReport,
    pub embed: EmbedReport,
    pub cluster: ClusterReport,
    pub crosstab: CrossTab,
    pub agreement: AgreeReport,
    pub utests: Option<UtestReport>,
    pub searches: Vec<SearchReport>,
}

pub struct PipelineOutcome {
    pub report: PipelineReport,
    pub searches: Vec<SearchOutcome>,
}

const STAGES: [&str; 5] = ["ingest", "preprocess", "embed", "cluster", "search"];

pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let labels = load_label_file(labels_path(cfg)?)?;
    let (ingest, kept) = stage_ingest(cfg, load_trials(trials_dir(cfg)?)?);
    let (prep, dataset) = stage_preprocess(cfg, &kept)?;
    let (embed, _, emb) = stage_embed(cfg, &dataset)?;
    let cluster = stage_cluster(cfg, &emb)?;
    let crosstab = stage_crosstab(&cluster, &labels)?;
    let agreement = stage_agree(&labels)?;
    let utests = if cluster.k >= 2 && labels.iter().any(|l| l.cbarq.is_some()) { Some(stage_utest(&cluster, &labels)?) } else { None };
    let searches = cfg.tasks.iter().map(|t| stage_search(cfg, t, &emb, &labels)).collect::<Result<Vec<_>>>()?;
    let report = PipelineReport {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        config: serde_json::to_value(cfg).stage("output")?,
        stage_seeds: STAGES.iter().map(|s| (s.to_string(), cfg.stage_seed(s))).collect(),
        ingest,
        preprocess: prep,
        embed,
        cluster,
        crosstab,
        agreement,
        utests,
        searches: searches.iter().map(|s| s.report.clone()).collect(),
    };
    Ok(PipelineOutcome { report, searches })
}

// ---- entry point --------------------------------------------------------

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = build_config(&cli.global)?;
    if let Command::Search { population: Some(p), .. } = &cli.command {
        cfg.population = *p;
    }
    cfg.validate()?;
    let out = cfg.out.clone();
    match cli.command {
        Command::Ingest => {
            let (report, _) = stage_ingest(&cfg, load_trials(trials_dir(&cfg)?)?);
            if let Some(path) = &cfg.labels {
                load_label_file(path)?;
            }
            write_json(&out.join("ingest.json"), &envelope(&cfg, "ingest", report))
        }
        Command::Preprocess => {
            let (_, kept) = stage_ingest(&cfg, load_trials(trials_dir(&cfg)?)?);
            let (report, dataset) = stage_preprocess(&cfg, &kept)?;
            write_json(&out.join("dataset.json"), &dataset)?;
            write_json(&out.join("preprocess.json"), &envelope(&cfg, "preprocess", report))
        }
        Command::Embed { dataset } => {
            let dataset: DatasetFile = read_json("embed", &dataset.unwrap_or_else(|| out.join("dataset.json")))?;
            let (report, checkpoint, emb) = stage_embed(&cfg, &dataset)?;
            let f = fs::File::create(out.join("checkpoint.json")).stage("output")?;
            checkpoint.save(std::io::BufWriter::new(f)).stage("output")?;
            write_json(&out.join("embeddings.json"), &emb)?;
            write_json(&out.join("embed.json"), &envelope(&cfg, "embed", report))
        }
        Command::Cluster { embeddings } => {
            let emb: EmbeddingsFile = read_json("cluster", &embeddings.unwrap_or_else(|| out.join("embeddings.json")))?;
            let report = stage_cluster(&cfg, &emb)?;
            write_json(&out.join("cluster.json"), &envelope(&cfg, "cluster", report))
        }
        Command::Agree => {
            let labels = load_label_file(labels_path(&cfg)?)?;
            write_json(&out.join("agree.json"), &envelope(&cfg, "agree", stage_agree(&labels)?))
        }
        Command::Utest { clusters } => {
            let labels = load_label_file(labels_path(&cfg)?)?;
            let report: Report<ClusterReport> = read_json("utest", &clusters.unwrap_or_else(|| out.join("cluster.json")))?;
            let result = serde_json::json!({
                "crosstab": stage_crosstab(&report.result, &labels)?,
                "utests": stage_utest(&report.result, &labels)?,
            });
            write_json(&out.join("utest.json"), &envelope(&cfg, "utest", result))
        }
        Command::Search { embeddings, .. } => {
            let labels = load_label_file(labels_path(&cfg)?)?;
            let emb: EmbeddingsFile = read_json("search", &embeddings.unwrap_or_else(|| out.join("embeddings.json")))?;
            let [task] = cfg.tasks.as_slice() else {
                return Err(CliError::new("config", "InvalidValue", "search takes exactly one --task"));
            };
            let o = stage_search(&cfg, task, &emb, &labels)?;
            let stem = task.to_string().replace(':', "_");
            write_json(&out.join(format!("model_{stem}.json")), &o.artifact)?;
            write_json(&out.join(format!("search_log_{stem}.json")), &o.result.log)?;
            write_json(&out.join(format!("search_{stem}.json")), &envelope(&cfg, "search", o.report))
        }
        Command::Predict { model, embeddings } => {
            let artifact: ModelArtifact = read_json("predict", &model)?;
            let emb: EmbeddingsFile = read_json("predict", &embeddings.unwrap_or_else(|| out.join("embeddings.json")))?;
            let rows = stage_predict(&artifact, &emb)?;
            write_json(&out.join("predictions.json"), &envelope(&cfg, "predict", rows))
        }
        Command::Synth { n_per_profile, profiles, duration, missing_rate, confusion } => {
            let kinds = profiles
                .split(',')
                .map(|p| p.trim().parse::<ProfileKind>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .stage("synth")?;
            let mut gen = GenConfig { duration_s: duration, missing_rate, seed: cfg.stage_seed("synth"), ..GenConfig::default() };
            gen.event_times_s.retain(|t| *t <= duration);
            let mut dc = DatasetConfig::new(n_per_profile, &kinds, gen);
            dc.rater_confusion = confusion;
            let corpus = synthetic::gen_dataset(&dc).stage("synth")?;
            synthetic::write_corpus(&corpus, &out).stage("synth")
        }
        Command::Pipeline => {
            let outcome = run_pipeline(&cfg)?;
            for s in &outcome.searches {
                let stem = s.artifact.task.replace(':', "_");
                write_json(&out.join(format!("model_{stem}.json")), &s.artifact)?;
            }
            write_json(&out.join("report.json"), &outcome.report)
        }
    }
}

fn thread_pool() -> std::result::Result<rayon::ThreadPool, CliError> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| CliError::new("config", "InvalidValue", format!("{THREADS_ENV}={v:?} is not a count")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| CliError::new("config", "ThreadPool", e))
}

/// Run the command line; returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let outcome = thread_pool().and_then(|pool| pool.install(|| execute(cli)));
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": e }));
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_text_and_flag_precedence() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("# comment\nseed = 7\nkmax=5\ntask = cbarq:EXC, score\n\nae-grid = quick\n").unwrap();
        assert_eq!((cfg.seed, cfg.kmax, cfg.ae_grid), (7, Some(5), AeGrid::Quick));
        assert_eq!(cfg.tasks, vec![SearchTask::Cbarq(CbarqFactor::Exc), SearchTask::Score]);
        cfg.set("seed", "9").unwrap();
        assert_eq!(cfg.seed, 9);
        assert!(cfg.apply_text("bogus = 1").is_err());
        assert!(cfg.apply_text("seed").is_err());
        assert!(cfg.set("task", "cbarq:XYZ").is_err());
    }

    #[test]
    fn hash_ignores_paths() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.out = PathBuf::from("elsewhere");
        b.trials = Some(PathBuf::from("x"));
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn validation_ranges() {
        let mut c = RunConfig::default();
        assert!(c.validate().is_ok());
        c.coverage_threshold = 1.5;
        assert!(c.validate().is_err());
        let c = RunConfig { smooth_window: 4, ..RunConfig::default() };
        assert!(c.validate().is_err());
        let c = RunConfig { budget: 10, population: 50, ..RunConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["trailmark", "frobnicate"]), 2);
        assert_eq!(run(["trailmark", "--help"]), 0);
        assert_eq!(run(["trailmark", "ingest", "--seed", "x"]), 2);
    }

    #[test]
    fn data_errors_exit_one() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let missing = dir.path().join("nope");
        let code = run(["trailmark", "ingest", "--trials", missing.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code, 1);
    }

    #[test]
    fn task_names_round_trip() {
        for t in ["score", "cbarq:EXC", "cbarq:SDF"] {
            assert_eq!(t.parse::<SearchTask>().unwrap().to_string(), t);
        }
    }
}
