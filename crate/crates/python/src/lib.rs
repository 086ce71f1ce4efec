//! Python bindings: run configuration, pipeline stages, metrics and a
//! handle on trained models.
//!
//! Structured results cross the boundary as JSON and are decoded into
//! plain Python objects.

use std::path::PathBuf;

use pyo3::exceptions::{PyFileNotFoundError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use dualgraph::config::RunConfig;
use dualgraph::data::Instance;
use dualgraph::metrics::evaluate;
use dualgraph::model::{predict, score_instance, Ablation};
use dualgraph::pipeline::{self, Trained};
use dualgraph::Error;

fn to_py_err(e: Error) -> PyErr {
    let payload = e.to_json().to_string();
    match e {
        Error::Config { .. } => PyValueError::new_err(payload),
        Error::MissingArtifact { .. } => PyFileNotFoundError::new_err(payload),
        _ => PyRuntimeError::new_err(payload),
    }
}

fn json_to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A validated run configuration.
#[pyclass(name = "RunConfig", module = "dualgraph_py", skip_from_py_object)]
#[derive(Clone)]
struct PyRunConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyRunConfig {
    /// Parse a JSON document; missing keys take their defaults.
    #[new]
    #[pyo3(signature = (json = "{}"))]
    fn new(json: &str) -> PyResult<Self> {
        Ok(PyRunConfig {
            inner: RunConfig::from_json(json).map_err(to_py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyRunConfig {
            inner: RunConfig::load(&path).map_err(to_py_err)?,
        })
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    fn with_seed(&self, seed: u64) -> Self {
        PyRunConfig {
            inner: self.inner.clone().with_seed(seed),
        }
    }

    /// Hex SHA-256 of the canonical form, as stored in checkpoints.
    fn hash(&self) -> String {
        self.inner
            .hash()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.inner).expect("config serializes")
    }

    fn __repr__(&self) -> String {
        format!("RunConfig(seed={})", self.inner.seed)
    }
}

#[pyfunction]
fn synth(config: &PyRunConfig, out: PathBuf) -> PyResult<usize> {
    Ok(pipeline::synth(&config.inner, &out)
        .map_err(to_py_err)?
        .rows
        .len())
}

/// Returns `(train, val, test)` instance counts.
#[pyfunction]
fn ingest(config: &PyRunConfig, out: PathBuf) -> PyResult<(usize, usize, usize)> {
    let ds = pipeline::ingest(&config.inner, &out).map_err(to_py_err)?;
    Ok((ds.train.len(), ds.val.len(), ds.test.len()))
}

/// Returns the collaborative edge count.
#[pyfunction]
fn build_graphs(config: &PyRunConfig, out: PathBuf) -> PyResult<usize> {
    Ok(pipeline::build_graphs(&config.inner, &out)
        .map_err(to_py_err)?
        .collaborative
        .edge_count())
}

/// Train and return the per-epoch metrics log. `ablation` is one of
/// `none`, `no-attr`, `uu-vv-only`, `uv-only`, `attr-only`, `base-only`.
#[pyfunction]
#[pyo3(signature = (config, out, ablation = None))]
fn train<'py>(
    py: Python<'py>,
    config: &PyRunConfig,
    out: PathBuf,
    ablation: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let ablation = match ablation {
        Some(name) => Some(
            Ablation::parse(name)
                .ok_or_else(|| PyValueError::new_err(format!("unknown ablation {name}")))?,
        ),
        None => None,
    };
    let outcome = pipeline::train_model(&config.inner, &out, ablation).map_err(to_py_err)?;
    json_to_py(py, &outcome.log)
}

#[pyfunction]
fn eval(py: Python<'_>, out: PathBuf) -> PyResult<Bound<'_, PyAny>> {
    json_to_py(py, &pipeline::eval(&out).map_err(to_py_err)?)
}

#[pyfunction]
fn grad_check(py: Python<'_>, out: PathBuf) -> PyResult<Bound<'_, PyAny>> {
    json_to_py(py, &pipeline::grad_check(&out).map_err(to_py_err)?)
}

#[pyfunction]
fn auc(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    dualgraph::metrics::auc(&scores, &labels).map_err(to_py_err)
}

#[pyfunction]
fn logloss(predictions: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    dualgraph::metrics::logloss(&predictions, &labels).map_err(to_py_err)
}

/// A checkpoint loaded together with its dataset and graphs.
#[pyclass(name = "Model", module = "dualgraph_py")]
struct PyModel {
    trained: Trained,
    table: dualgraph::tensor::Mat,
}

#[pymethods]
impl PyModel {
    /// Load `model.ckpt` and its inputs from an output directory.
    #[staticmethod]
    fn load(out: PathBuf) -> PyResult<Self> {
        let trained = pipeline::load_trained(&out).map_err(to_py_err)?;
        let table = trained
            .network
            .enhance(&trained.state.params)
            .map_err(to_py_err)?;
        Ok(PyModel { trained, table })
    }

    #[getter]
    fn spec<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &self.trained.state.spec)
    }

    /// Click probabilities for the test split, through the full model.
    fn predict_test(&self) -> PyResult<Vec<f64>> {
        predict(
            &self.trained.network,
            &self.trained.state.params,
            &self.trained.dataset.test,
        )
        .map_err(to_py_err)
    }

    /// Probability of test instance `index`, read from the enhanced table.
    fn score_test(&self, index: usize) -> PyResult<f64> {
        let inst: &Instance = self
            .trained
            .dataset
            .test
            .get(index)
            .ok_or_else(|| PyValueError::new_err(format!("test index {index} out of range")))?;
        Ok(score_instance(
            &self.table,
            &self.trained.state.params.mlp,
            inst,
        ))
    }

    fn test_labels(&self) -> Vec<u8> {
        self.trained.dataset.test.iter().map(|i| i.label).collect()
    }

    fn evaluate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let scores = self.predict_test()?;
        json_to_py(py, &evaluate(&self.trained.dataset.test, &scores))
    }

    /// Enhanced embedding of global feature `index`.
    fn embedding(&self, index: usize) -> PyResult<Vec<f64>> {
        if index >= self.table.rows() {
            return Err(PyValueError::new_err(format!(
                "feature {index} out of range"
            )));
        }
        Ok(self.table.row(index).to_vec())
    }

    #[getter]
    fn n_features(&self) -> usize {
        self.table.rows()
    }
}

#[pymodule]
fn dualgraph_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(ingest, m)?)?;
    m.add_function(wrap_pyfunction!(build_graphs, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(eval, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(logloss, m)?)?;
    Ok(())
}
