//! Python bindings for the trailmark library.
//!
//! Structured results (cluster models, pipeline reports) cross the boundary
//! as plain dicts and lists.

use std::collections::HashMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;
use serde::Serialize;

use trailmark::cli::{self, RunConfig};
use trailmark::clustering;
use trailmark::preprocess;
use trailmark::stats::{self, SignClass};
use trailmark::synthetic::{self, DatasetConfig, GenConfig, ProfileKind};
use trailmark::trajectory_io::{self, RawTrial};

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// One parsed trajectory document.
#[pyclass(frozen, name = "Trial", module = "trailmark_py")]
struct PyTrial(RawTrial);

#[pymethods]
impl PyTrial {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        trajectory_io::parse_trial_str(text).map(Self).map_err(value_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let f = std::fs::File::open(&path).map_err(|e| PyOSError::new_err(format!("{}: {e}", path.display())))?;
        trajectory_io::parse_trial(std::io::BufReader::new(f)).map(Self).map_err(value_err)
    }

    #[getter]
    fn trial_id(&self) -> &str {
        &self.0.trial_id
    }

    #[getter]
    fn fps(&self) -> f64 {
        self.0.fps_native
    }

    #[getter]
    fn n_frames(&self) -> usize {
        self.0.frames.len()
    }

    #[getter]
    fn duration_s(&self) -> f64 {
        self.0.duration_s()
    }

    /// Fraction of frames where both dog and person are detected.
    fn coverage(&self) -> f64 {
        trajectory_io::detection_coverage(&self.0)
    }

    fn to_json(&self) -> String {
        trajectory_io::serialize_trial_string(&self.0)
    }

    /// Resample, fill gaps and smooth. Returns four channel rows:
    /// dog x, dog y, person x, person y.
    #[pyo3(signature = (fps = preprocess::STANDARD_FPS, window = preprocess::DEFAULT_SMOOTH_WINDOW))]
    fn prepare(&self, fps: f64, window: usize) -> PyResult<Vec<Vec<f64>>> {
        let s = preprocess::prepare_trial(&self.0, fps, window).map_err(value_err)?;
        let xs = |t: &preprocess::Trajectory| t.points.iter().map(|p| p.x).collect::<Vec<_>>();
        let ys = |t: &preprocess::Trajectory| t.points.iter().map(|p| p.y).collect::<Vec<_>>();
        Ok(vec![xs(&s.dog), ys(&s.dog), xs(&s.person), ys(&s.person)])
    }

    fn __repr__(&self) -> String {
        format!("Trial({:?}, frames={}, fps={})", self.0.trial_id, self.0.frames.len(), self.0.fps_native)
    }
}

#[pyclass(frozen, get_all, name = "UTest", module = "trailmark_py")]
struct PyUTest {
    u: f64,
    z: f64,
    p: f64,
    method: String,
    n1: usize,
    n2: usize,
}

#[pymethods]
impl PyUTest {
    fn __repr__(&self) -> String {
        format!("UTest(u={}, z={:.4}, p={:.6}, method={})", self.u, self.z, self.p, self.method)
    }
}

/// Two-sided Mann-Whitney U test of `a` against `b`.
#[pyfunction]
fn mann_whitney(a: Vec<f64>, b: Vec<f64>) -> PyResult<PyUTest> {
    let r = stats::mann_whitney(&a, &b).map_err(value_err)?;
    let method = serde_json::to_value(r.method).map_err(value_err)?.as_str().unwrap_or_default().to_string();
    Ok(PyUTest { u: r.u, z: r.z, p: r.p_two_sided, method, n1: r.n1, n2: r.n2 })
}

#[pyfunction]
#[pyo3(signature = (observed_agreement, q = 3))]
fn free_marginal_kappa(observed_agreement: f64, q: u32) -> f64 {
    stats::free_marginal_kappa(observed_agreement, q)
}

/// Mean fraction of agreeing rater pairs per item, signs given as "-", "0", "+".
#[pyfunction]
fn percent_agreement(panel: Vec<[String; 3]>) -> PyResult<f64> {
    let parsed = panel
        .iter()
        .map(|row| {
            let mut out = [SignClass::Neutral; 3];
            for (o, s) in out.iter_mut().zip(row) {
                *o = s.parse().map_err(value_err)?;
            }
            Ok(out)
        })
        .collect::<PyResult<Vec<_>>>()?;
    stats::percent_agreement(&parsed).map_err(value_err)
}

/// Best of `restarts` k-means runs, returned as a dict.
#[pyfunction]
#[pyo3(signature = (vectors, k, seed = 0, restarts = clustering::DEFAULT_RESTARTS, max_iter = 300))]
fn kmeans<'py>(py: Python<'py>, vectors: Vec<Vec<f64>>, k: usize, seed: u64, restarts: usize, max_iter: usize) -> PyResult<Bound<'py, PyAny>> {
    let model = py.detach(|| clustering::kmeans_best_of(&vectors, k, seed, restarts, max_iter)).map_err(value_err)?;
    to_py(py, &model)
}

/// Elbow choice over inertias for k = 1, 2, ...; returns (k, distances).
#[pyfunction]
fn elbow(inertia_by_k: Vec<f64>) -> PyResult<(usize, Vec<f64>)> {
    let c = clustering::elbow_select(&inertia_by_k).map_err(value_err)?;
    Ok((c.k, c.distances))
}

/// Write a synthetic corpus (trials/, labels.csv, manifest.json) and return
/// the trial ids.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (out, n_per_profile = 25, profiles = vec!["neutral".to_string(), "excessive".to_string()], duration = 60.0, missing_rate = 0.0, confusion = 0.1, seed = 0))]
fn synth(
    py: Python<'_>,
    out: PathBuf,
    n_per_profile: usize,
    profiles: Vec<String>,
    duration: f64,
    missing_rate: f64,
    confusion: f64,
    seed: u64,
) -> PyResult<Vec<String>> {
    let kinds = profiles.iter().map(|p| p.parse::<ProfileKind>()).collect::<Result<Vec<_>, _>>().map_err(value_err)?;
    let events: Vec<f64> = [10.0, 20.0, 30.0].into_iter().filter(|t| *t <= duration).collect();
    let gen = GenConfig { duration_s: duration, missing_rate, seed, event_times_s: events, ..GenConfig::default() };
    let mut cfg = DatasetConfig::new(n_per_profile, &kinds, gen);
    cfg.rater_confusion = confusion;
    py.detach(|| {
        let corpus = synthetic::gen_dataset(&cfg)?;
        synthetic::write_corpus(&corpus, &out)?;
        Ok(corpus.trials.iter().map(|t| t.trial_id.clone()).collect())
    })
    .map_err(|e: synthetic::SynthError| value_err(e))
}

/// Run every stage in memory and return the report dict. `config` takes the
/// same keys as a config file, with string values.
#[pyfunction]
#[pyo3(signature = (trials, labels, config = None))]
fn run_pipeline<'py>(py: Python<'py>, trials: PathBuf, labels: PathBuf, config: Option<HashMap<String, String>>) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = RunConfig { trials: Some(trials), labels: Some(labels), ..RunConfig::default() };
    let mut entries: Vec<_> = config.unwrap_or_default().into_iter().collect();
    entries.sort();
    for (k, v) in &entries {
        cfg.set(k, v).map_err(value_err)?;
    }
    let outcome = py.detach(|| cli::run_pipeline(&cfg)).map_err(value_err)?;
    to_py(py, &outcome.report)
}

#[pymodule]
pub fn trailmark_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTrial>()?;
    m.add_class::<PyUTest>()?;
    m.add_function(wrap_pyfunction!(mann_whitney, m)?)?;
    m.add_function(wrap_pyfunction!(free_marginal_kappa, m)?)?;
    m.add_function(wrap_pyfunction!(percent_agreement, m)?)?;
    m.add_function(wrap_pyfunction!(kmeans, m)?)?;
    m.add_function(wrap_pyfunction!(elbow, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
