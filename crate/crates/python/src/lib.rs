//! Python module `fairrec`.
//!
//! Reports, audits and snapshots come back as plain dicts; configs can be
//! passed as dicts or JSON strings with the same fields as the CLI's
//! `--config` file.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyString;
use serde::Serialize;

use fairrec_core::cluster::{kmeans_fit, KMeansConfig};
use fairrec_core::model::{train_classifier, Classifier, LogisticConfig};
use fairrec_core::pipeline::{cmd_audit, cmd_baseline, cmd_run, AuditConfig, BaselineConfig, RunConfig, StageError};
use fairrec_core::recourse::gower as gower_distance;
use fairrec_core::rl_env::{AgentAction, RecourseEnv, Scenario, ScenarioSpec};
use fairrec_core::tabular::{affected_subset, Dataset as CoreDataset};
use fairrec_core::{synthetic, Error};

create_exception!(fairrec, FairrecError, PyException);

fn err(e: Error) -> PyErr {
    match e {
        Error::Config(m) => PyValueError::new_err(m),
        other => FairrecError::new_err(other.to_string()),
    }
}

fn stage_err(e: StageError) -> PyErr {
    match e.source {
        Error::Config(_) => PyValueError::new_err(e.to_string()),
        _ => FairrecError::new_err(e.to_string()),
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| FairrecError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn config_json(obj: &Bound<'_, PyAny>) -> PyResult<String> {
    if let Ok(s) = obj.cast::<PyString>() {
        return Ok(s.to_string());
    }
    let py = obj.py();
    py.import("json")?.call_method1("dumps", (obj,))?.extract()
}

/// Tabular dataset with its feature schema.
#[pyclass(name = "Dataset", module = "fairrec", frozen)]
struct PyDataset {
    inner: CoreDataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn load(data: PathBuf, schema: PathBuf) -> PyResult<Self> {
        CoreDataset::load_csv(data, schema).map(|inner| Self { inner }).map_err(err)
    }

    /// The built-in two-group demo population.
    #[staticmethod]
    fn synthetic(rows: usize, seed: u64) -> PyResult<Self> {
        synthetic::dataset(rows, seed).map(|inner| Self { inner }).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.inner.schema().features().iter().map(|f| f.name.clone()).collect()
    }

    #[getter]
    fn labels(&self) -> Vec<u8> {
        self.inner.labels().to_vec()
    }

    #[getter]
    fn protected(&self) -> Vec<u8> {
        (0..self.inner.len()).map(|i| self.inner.protected_value(i)).collect()
    }

    /// Rows scaled into [0, 1].
    fn normalized(&self) -> Vec<Vec<f64>> {
        self.inner.normalized()
    }

    /// Gower distance between two normalized rows.
    fn gower(&self, x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
        gower_distance(self.inner.schema(), &x, &y).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Dataset(rows={}, features={})", self.inner.len(), self.inner.schema().dim())
    }
}

/// Recourse environment over the affected set of a logistic model fitted
/// to `dataset`.
#[pyclass(name = "RecourseEnv", module = "fairrec")]
struct PyRecourseEnv {
    inner: RecourseEnv,
}

#[pymethods]
impl PyRecourseEnv {
    #[new]
    #[pyo3(signature = (dataset, scenario = "hybrid", max_actions = 5, max_steps = 100))]
    fn new(dataset: &PyDataset, scenario: &str, max_actions: usize, max_steps: usize) -> PyResult<Self> {
        let scenario: Scenario = scenario.parse().map_err(err)?;
        let ds = &dataset.inner;
        let model = train_classifier(ds, &LogisticConfig::default()).map_err(err)?;
        let affected = affected_subset(ds, &model).map_err(err)?;
        let rows = ds.normalized();
        let pick = |idx: &[usize]| idx.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>();
        let spec = ScenarioSpec {
            max_actions,
            max_steps,
            ..ScenarioSpec::new(scenario)
        };
        let classifier: Arc<dyn Classifier> = Arc::new(model);
        let env = RecourseEnv::new(
            ds.schema().clone(),
            classifier,
            pick(&affected.group0),
            pick(&affected.group1),
            spec,
        )
        .map_err(err)?;
        Ok(Self {
            inner: env.with_trajectory_recording(false),
        })
    }

    #[getter]
    fn state_len(&self) -> usize {
        self.inner.state_len()
    }

    fn reset(&mut self) -> Vec<f64> {
        self.inner.reset();
        self.inner.state_vector().to_vec()
    }

    /// Applies one action; both components lie in [-1, 1]. Returns
    /// `(state, reward, terminated, truncated)`.
    fn step(&mut self, a1: f64, a2: f64) -> PyResult<(Vec<f64>, f64, bool, bool)> {
        let out = self.inner.step(AgentAction { a1, a2 }).map_err(err)?;
        Ok((out.state, out.reward, out.terminated, out.truncated))
    }

    /// Fairness metrics of the current action set.
    fn snapshot<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, self.inner.snapshot())
    }
}

/// Full run; returns the report dict and writes outputs to `config["out"]`.
#[pyfunction]
fn run<'py>(py: Python<'py>, config: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
    let cfg: RunConfig = serde_json::from_str(&config_json(config)?).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let report = py.detach(|| cmd_run(&cfg)).map_err(stage_err)?;
    to_py(py, &report)
}

#[pyfunction]
#[pyo3(signature = (data, schema, seed, model = None, predictions = None))]
fn audit<'py>(
    py: Python<'py>,
    data: PathBuf,
    schema: PathBuf,
    seed: u64,
    model: Option<PathBuf>,
    predictions: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = AuditConfig {
        data,
        schema,
        model,
        predictions,
        logistic: Default::default(),
        seed,
    };
    let out = py.detach(|| cmd_audit(&cfg)).map_err(stage_err)?;
    to_py(py, &out)
}

#[pyfunction]
#[pyo3(signature = (data, schema, seed, model = None))]
fn baseline<'py>(
    py: Python<'py>,
    data: PathBuf,
    schema: PathBuf,
    seed: u64,
    model: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = BaselineConfig {
        data,
        schema,
        model,
        logistic: Default::default(),
        autoencoder: Default::default(),
        seed,
    };
    let out = py.detach(|| cmd_baseline(&cfg)).map_err(stage_err)?;
    to_py(py, &out)
}

/// k-means++ then Lloyd; returns `{assignment, centroids, inertia, converged}`.
#[pyfunction]
#[pyo3(signature = (points, k, seed = 0, max_iter = 300))]
fn kmeans<'py>(
    py: Python<'py>,
    points: Vec<Vec<f64>>,
    k: usize,
    seed: u64,
    max_iter: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let c = kmeans_fit(&points, &KMeansConfig { k, max_iter, seed }).map_err(err)?;
    to_py(
        py,
        &serde_json::json!({
            "assignment": c.assignment,
            "centroids": c.centroids,
            "inertia": c.inertia,
            "converged": c.converged,
        }),
    )
}

/// Writes `data.csv` and `schema.json` for the demo population into `dir`.
#[pyfunction]
fn write_synthetic(dir: PathBuf, rows: usize, seed: u64) -> PyResult<()> {
    synthetic::write_files(dir, rows, seed).map_err(err)
}

#[pymodule]
fn fairrec(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("FairrecError", m.py().get_type::<FairrecError>())?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyRecourseEnv>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(audit, m)?)?;
    m.add_function(wrap_pyfunction!(baseline, m)?)?;
    m.add_function(wrap_pyfunction!(kmeans, m)?)?;
    m.add_function(wrap_pyfunction!(write_synthetic, m)?)?;
    Ok(())
}
