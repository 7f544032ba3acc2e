//! Python bindings. Matrices cross the boundary as lists of rows.

use std::path::PathBuf;

use deepmmc::constraints::{partition, sample_constraints as sample, PairwiseConstraint};
use deepmmc::data::{load_csv, LabelColumn};
use deepmmc::evaluation;
use deepmmc::experiment::{prepare, run_experiment as run_grid, synthetic_blobs as blobs, ExperimentConfig};
use deepmmc::mmc::{self, StopReason, TrainConfig};
use deepmmc::model_io::{load_model as load, save_model, ModelMetadata, SavedModel};
use deepmmc::numeric::{DataMatrix, FeatureKind};
use deepmmc::rbm::PretrainConfig;
use deepmmc::rng::SeededRng;
use deepmmc::Error;
use ndarray::Array2;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidInput(_) | Error::SamplingExhausted { .. } => PyValueError::new_err(e.to_string()),
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_array(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("rows differ in length"));
    }
    Array2::from_shape_vec((n, d), rows.into_iter().flatten().collect())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// A feature matrix with optional class labels.
#[pyclass(name = "Dataset", module = "_deepmmc", skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: DataMatrix,
}

#[pymethods]
impl PyDataset {
    /// `binary=True` marks features in [0, 1] (modeled with Bernoulli
    /// visible units); otherwise features are continuous.
    #[new]
    #[pyo3(signature = (rows, labels=None, binary=false))]
    fn new(rows: Vec<Vec<f64>>, labels: Option<Vec<usize>>, binary: bool) -> PyResult<Self> {
        let kind = if binary {
            FeatureKind::Binary
        } else {
            FeatureKind::Continuous
        };
        let inner = DataMatrix::new(to_array(rows)?, labels, kind).map_err(py_err)?;
        Ok(Self { inner })
    }

    /// `label_column` is `"last"`, `"none"` or a 0-based column index.
    #[staticmethod]
    #[pyo3(signature = (path, label_column="last"))]
    fn from_csv(path: PathBuf, label_column: &str) -> PyResult<Self> {
        let column: LabelColumn = label_column.parse().map_err(py_err)?;
        Ok(Self {
            inner: load_csv(&path, column).map_err(py_err)?,
        })
    }

    #[getter]
    fn n_rows(&self) -> usize {
        self.inner.n_rows()
    }

    #[getter]
    fn n_features(&self) -> usize {
        self.inner.n_features()
    }

    #[getter]
    fn labels(&self) -> Option<Vec<usize>> {
        self.inner.labels().map(<[usize]>::to_vec)
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        to_rows(self.inner.values())
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n_rows={}, n_features={}, labeled={})",
            self.inner.n_rows(),
            self.inner.n_features(),
            self.inner.labels().is_some()
        )
    }
}

/// A trained encoder and cluster weights, with the input preprocessing.
#[pyclass(name = "Model", module = "_deepmmc")]
struct PyModel {
    saved: SavedModel,
    objective: Vec<f64>,
    converged: bool,
}

#[pymethods]
impl PyModel {
    /// Cluster index for every row of raw (unpreprocessed) features.
    fn predict(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
        self.saved.predict(&to_array(rows)?.view()).map_err(py_err)
    }

    /// Codes of the top encoder layer for raw features.
    fn encode(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = self
            .saved
            .preprocessing
            .apply(&to_array(rows)?.view())
            .map_err(py_err)?;
        let codes = self.saved.model.net.transform(&x.view()).map_err(py_err)?;
        Ok(to_rows(&codes))
    }

    /// `same − diff` score per `(i, j)` pair of rows; higher means the pair
    /// more likely shares a cluster.
    fn pair_scores(&self, rows: Vec<Vec<f64>>, pairs: Vec<(usize, usize)>) -> PyResult<Vec<f64>> {
        let x = self
            .saved
            .preprocessing
            .apply(&to_array(rows)?.view())
            .map_err(py_err)?;
        let codes = self.saved.model.net.transform(&x.view()).map_err(py_err)?;
        let pairs: Vec<PairwiseConstraint> = pairs.into_iter().map(|(i, j)| PairwiseConstraint::must(i, j)).collect();
        evaluation::pairwise_scores(&self.saved.model.weights, &codes.view(), &pairs).map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_model(&path, &self.saved).map_err(py_err)
    }

    #[getter]
    fn clusters(&self) -> usize {
        self.saved.metadata.k
    }

    #[getter]
    fn code_dim(&self) -> usize {
        self.saved.metadata.d
    }

    /// Objective per training iteration; empty for a loaded model.
    #[getter]
    fn objective(&self) -> Vec<f64> {
        self.objective.clone()
    }

    #[getter]
    fn converged(&self) -> bool {
        self.converged
    }

    fn __repr__(&self) -> String {
        let m = &self.saved.metadata;
        format!(
            "Model(clusters={}, code_dim={}, lambda={}, beta={}, seed={})",
            m.k, m.d, m.lambda, m.beta, m.seed
        )
    }
}

/// Trains on `data` under `(i, j, same)` constraints. Unset options keep
/// the library defaults.
#[pyfunction]
#[pyo3(signature = (
    data, pairs, clusters, layers=vec![100], lambda_=None, beta=None, max_iters=None,
    net_rate=None, tolerance=None, seed=1, pretrain_epochs=None, pca_dim=None
))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    data: &PyDataset,
    pairs: Vec<(usize, usize, bool)>,
    clusters: usize,
    layers: Vec<usize>,
    lambda_: Option<f64>,
    beta: Option<f64>,
    max_iters: Option<usize>,
    net_rate: Option<f64>,
    tolerance: Option<f64>,
    seed: u64,
    pretrain_epochs: Option<usize>,
    pca_dim: Option<usize>,
) -> PyResult<PyModel> {
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        clusters,
        lambda: lambda_.unwrap_or(defaults.lambda),
        beta: beta.unwrap_or(defaults.beta),
        max_iters: max_iters.unwrap_or(defaults.max_iters),
        net_rate: net_rate.unwrap_or(defaults.net_rate),
        tolerance: tolerance.unwrap_or(defaults.tolerance),
        seed,
        ..defaults
    };
    let mut pre = PretrainConfig::default();
    if let Some(e) = pretrain_epochs {
        pre.epochs = e;
    }
    let constraints = pairs
        .into_iter()
        .map(|(i, j, same)| PairwiseConstraint::new(i, j, same))
        .collect::<Result<Vec<_>, _>>()
        .map_err(py_err)?;
    let raw = data.inner.clone();
    let (report, prepared) = py
        .detach(|| -> deepmmc::Result<_> {
            let prepared = prepare(&raw, pca_dim)?;
            let split = partition(&constraints, prepared.x.n_rows())?;
            Ok((mmc::train(&prepared.x, &split, &layers, &cfg, &pre)?, prepared))
        })
        .map_err(py_err)?;
    let saved = SavedModel {
        metadata: ModelMetadata {
            k: clusters,
            d: report.model.weights.d(),
            lambda: cfg.lambda,
            beta: cfg.beta,
            seed,
        },
        model: report.model,
        preprocessing: prepared.preprocessing,
    };
    Ok(PyModel {
        saved,
        objective: report.objective,
        converged: report.stop_reason == StopReason::Converged,
    })
}

#[pyfunction]
fn load_model(path: PathBuf) -> PyResult<PyModel> {
    Ok(PyModel {
        saved: load(&path).map_err(py_err)?,
        objective: Vec::new(),
        converged: false,
    })
}

/// `n_pairs` distinct `(i, j, same)` constraints drawn from class labels.
#[pyfunction]
#[pyo3(signature = (labels, n_pairs, balance=0.5, seed=1))]
fn sample_constraints(
    labels: Vec<usize>,
    n_pairs: usize,
    balance: f64,
    seed: u64,
) -> PyResult<Vec<(usize, usize, bool)>> {
    let pool = sample(&labels, n_pairs, balance, &mut SeededRng::new(seed)).map_err(py_err)?;
    Ok(pool.into_iter().map(|c| (c.i, c.j, c.same)).collect())
}

#[pyfunction]
fn synthetic_blobs(n: usize, clusters: usize, dim: usize, separation: f64, seed: u64) -> PyResult<PyDataset> {
    Ok(PyDataset {
        inner: blobs(n, clusters, dim, separation, seed).map_err(py_err)?,
    })
}

#[pyfunction]
fn clustering_accuracy(pred: Vec<usize>, truth: Vec<usize>) -> PyResult<f64> {
    evaluation::clustering_accuracy(&pred, &truth).map_err(py_err)
}

#[pyfunction]
fn adjusted_rand_index(pred: Vec<usize>, truth: Vec<usize>) -> PyResult<f64> {
    evaluation::adjusted_rand_index(&pred, &truth).map_err(py_err)
}

#[pyfunction]
fn roc_auc(scores: Vec<f64>, positive: Vec<bool>) -> PyResult<f64> {
    evaluation::roc_auc(&scores, &positive).map_err(py_err)
}

/// Runs a full experiment grid from a JSON config and returns the JSON
/// report (the same document the CLI writes as `report.json`).
#[pyfunction]
fn run_experiment(py: Python<'_>, config_json: &str) -> PyResult<String> {
    let cfg: ExperimentConfig =
        serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(format!("config: {e}")))?;
    let report = py.detach(|| run_grid(&cfg)).map_err(py_err)?;
    serde_json::to_string(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn _deepmmc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(load_model, m)?)?;
    m.add_function(wrap_pyfunction!(sample_constraints, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_blobs, m)?)?;
    m.add_function(wrap_pyfunction!(clustering_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(adjusted_rand_index, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
