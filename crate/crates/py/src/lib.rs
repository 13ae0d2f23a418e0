//! Python bindings. Matrices cross the boundary as lists of rows and label
//! vectors as lists of ints; reports are also available as JSON text.

use std::collections::BTreeMap;
use std::path::PathBuf;

use fwshap::pipeline::method_weights;
use fwshap::shap::aggregate_to_weights;
use fwshap::{metrics, Algorithm, ClusterConfig, ExperimentConfig, ForestParams, LabelVector, WeightMethodSpec};
use ndarray::Array2;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: fwshap::Error) -> PyErr {
    match e {
        fwshap::Error::Io { .. } | fwshap::Error::MissingFile(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Array2::from_shape_vec((n, m), rows.into_iter().flatten().collect())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

fn rows(x: &Array2<f64>) -> Vec<Vec<f64>> {
    x.outer_iter().map(|r| r.to_vec()).collect()
}

fn metric_dict(m: &fwshap::Metrics) -> BTreeMap<&'static str, Option<f64>> {
    BTreeMap::from([
        ("ari", m.ari),
        ("nmi", m.nmi),
        ("silhouette", m.silhouette),
        ("ch", m.ch),
    ])
}

fn parse<T: std::str::FromStr<Err = fwshap::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

#[pyclass(name = "Dataset", module = "fwshap", frozen)]
struct PyDataset(fwshap::Dataset);

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (features, feature_names=None, true_labels=None, name="data"))]
    fn new(
        features: Vec<Vec<f64>>,
        feature_names: Option<Vec<String>>,
        true_labels: Option<Vec<i64>>,
        name: &str,
    ) -> PyResult<Self> {
        let x = matrix(features)?;
        let names = feature_names.unwrap_or_else(|| (0..x.ncols()).map(|j| format!("x{j}")).collect());
        fwshap::Dataset::new(name, x, names, true_labels).map(Self).map_err(to_py)
    }

    #[getter]
    fn name(&self) -> &str {
        &self.0.name
    }

    #[getter]
    fn n_samples(&self) -> usize {
        self.0.n_samples()
    }

    #[getter]
    fn n_features(&self) -> usize {
        self.0.n_features()
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.0.feature_names.clone()
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        rows(&self.0.features)
    }

    #[getter]
    fn true_labels(&self) -> Option<Vec<i64>> {
        self.0.true_labels.clone()
    }

    /// Z-scored copy; constant columns become zero.
    fn standardize(&self) -> Self {
        Self(fwshap::standardize(&self.0).0)
    }

    fn apply_weights(&self, weights: Vec<f64>) -> PyResult<Self> {
        let w = fwshap::WeightVector::try_new(weights).map_err(to_py)?;
        fwshap::apply_weights(&self.0, &w).map(Self).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(name={:?}, n_samples={}, n_features={})",
            self.0.name,
            self.0.n_samples(),
            self.0.n_features()
        )
    }
}

#[pyclass(name = "Forest", module = "fwshap", frozen)]
struct PyForest(fwshap::Forest);

#[pymethods]
impl PyForest {
    #[getter]
    fn n_trees(&self) -> usize {
        self.0.trees.len()
    }

    #[getter]
    fn n_classes(&self) -> usize {
        self.0.n_classes
    }

    #[getter]
    fn n_features(&self) -> usize {
        self.0.n_features
    }

    #[getter]
    fn classes(&self) -> Vec<i64> {
        self.0.classes.clone()
    }

    fn predict_proba(&self, row: Vec<f64>) -> PyResult<Vec<f64>> {
        fwshap::forest::predict_proba(&self.0, &row).map_err(to_py)
    }

    fn predict(&self, row: Vec<f64>) -> PyResult<i64> {
        fwshap::forest::predict(&self.0, &row).map_err(to_py)
    }

    /// Per-sample, per-feature, per-class attributions and the per-class
    /// base values, as `(values[i][j][c], base[c])`.
    fn shap_values(&self, py: Python<'_>, x: Vec<Vec<f64>>) -> PyResult<(Vec<Vec<Vec<f64>>>, Vec<f64>)> {
        let x = matrix(x)?;
        let t = py.detach(|| fwshap::forest_shap(&self.0, &x)).map_err(to_py)?;
        let values = t
            .values
            .outer_iter()
            .map(|sample| sample.outer_iter().map(|f| f.to_vec()).collect())
            .collect();
        Ok((values, t.base_values))
    }

    /// Mean absolute attribution per feature, normalized to sum to one.
    fn shap_weights(&self, py: Python<'_>, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let x = matrix(x)?;
        py.detach(|| {
            let t = fwshap::forest_shap(&self.0, &x)?;
            aggregate_to_weights(&t)
        })
        .map(|w| w.into_inner())
        .map_err(to_py)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }
}

#[pyclass(name = "RunReport", module = "fwshap", frozen)]
struct PyRunReport(fwshap::RunReport);

#[pymethods]
impl PyRunReport {
    #[getter]
    fn dataset(&self) -> &str {
        &self.0.dataset
    }

    #[getter]
    fn algorithm(&self) -> &'static str {
        self.0.config.algorithm.as_str()
    }

    #[getter]
    fn weighting(&self) -> &str {
        &self.0.weighting
    }

    #[getter]
    fn k(&self) -> usize {
        self.0.k
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.0.feature_names.clone()
    }

    #[getter]
    fn weight_vector(&self) -> Option<Vec<f64>> {
        self.0.weight_vector.as_ref().map(|w| w.as_slice().to_vec())
    }

    #[getter]
    fn metrics(&self) -> BTreeMap<&'static str, Option<f64>> {
        metric_dict(&self.0.metrics)
    }

    #[getter]
    fn initial_metrics(&self) -> BTreeMap<&'static str, Option<f64>> {
        metric_dict(&self.0.initial_metrics)
    }

    #[getter]
    fn labels(&self) -> Vec<i64> {
        self.0.labels.as_slice().to_vec()
    }

    #[getter]
    fn initial_labels(&self) -> Vec<i64> {
        self.0.initial_labels.as_slice().to_vec()
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.0.warnings.clone()
    }

    #[getter]
    fn timings(&self) -> BTreeMap<String, f64> {
        self.0.timings.clone()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.0).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!(
            "RunReport(dataset={:?}, algorithm={:?}, weighting={:?}, ari={:?})",
            self.0.dataset,
            self.0.config.algorithm.as_str(),
            self.0.weighting,
            self.0.metrics.ari
        )
    }
}

#[pyfunction]
#[pyo3(signature = (path, label_column=Some("class")))]
fn load_dataset(path: PathBuf, label_column: Option<&str>) -> PyResult<PyDataset> {
    fwshap::load_dataset(path, label_column).map(PyDataset).map_err(to_py)
}

/// Cluster the rows of `x`. Noise points (HDBSCAN only) are labelled -1.
#[pyfunction]
#[pyo3(signature = (algorithm, x, k=2, seed=0, min_cluster_size=5, min_samples=None))]
fn cluster(
    py: Python<'_>,
    algorithm: &str,
    x: Vec<Vec<f64>>,
    k: usize,
    seed: u64,
    min_cluster_size: usize,
    min_samples: Option<usize>,
) -> PyResult<Vec<i64>> {
    let algorithm: Algorithm = parse(algorithm)?;
    let x = matrix(x)?;
    let cfg = ClusterConfig {
        k,
        seed,
        min_cluster_size,
        min_samples,
        ..ClusterConfig::default()
    };
    cfg.validate().map_err(to_py)?;
    py.detach(|| fwshap::cluster::run(algorithm, &x, &cfg))
        .map(|l| l.as_slice().to_vec())
        .map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (x, y, n_trees=100, max_depth=None, min_leaf=1, seed=0))]
fn fit_forest(
    py: Python<'_>,
    x: Vec<Vec<f64>>,
    y: Vec<i64>,
    n_trees: usize,
    max_depth: Option<usize>,
    min_leaf: usize,
    seed: u64,
) -> PyResult<PyForest> {
    let x = matrix(x)?;
    let params = ForestParams {
        n_trees,
        max_depth,
        min_leaf,
        seed,
        ..ForestParams::default()
    };
    let y = LabelVector::from_raw(&y);
    py.detach(|| fwshap::fit_forest(&x, &y, &params))
        .map(PyForest)
        .map_err(to_py)
}

/// Weights a method (`shap`, `lp`, `mrmr`, `pca`, `ftest` or an ensemble
/// such as `shap+lp`) derives from `x` and a partition of its rows.
#[pyfunction]
#[pyo3(signature = (method, x, labels, n_trees=100, seed=0))]
fn feature_weights(
    py: Python<'_>,
    method: &str,
    x: Vec<Vec<f64>>,
    labels: Vec<i64>,
    n_trees: usize,
    seed: u64,
) -> PyResult<(Vec<f64>, Vec<String>)> {
    let spec: WeightMethodSpec = parse(method)?;
    let x = matrix(x)?;
    let labels = LabelVector::from_raw(&labels);
    let forest = ForestParams {
        n_trees,
        seed,
        ..ForestParams::default()
    };
    py.detach(|| method_weights(&spec, &x, &labels, &forest))
        .map(|(w, warnings)| (w.into_inner(), warnings))
        .map_err(to_py)
}

#[pyfunction]
fn adjusted_rand_index(a: Vec<i64>, b: Vec<i64>) -> PyResult<f64> {
    metrics::adjusted_rand_index(&a, &b).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (a, b, normalization="arithmetic"))]
fn normalized_mutual_information(a: Vec<i64>, b: Vec<i64>, normalization: &str) -> PyResult<f64> {
    let norm = match normalization {
        "arithmetic" => metrics::NmiNormalization::Arithmetic,
        "geometric" => metrics::NmiNormalization::Geometric,
        other => return Err(PyValueError::new_err(format!("unknown normalization {other:?}"))),
    };
    metrics::normalized_mutual_information_with(&a, &b, norm).map_err(to_py)
}

#[pyfunction]
fn silhouette(x: Vec<Vec<f64>>, labels: Vec<i64>) -> PyResult<f64> {
    metrics::silhouette(&matrix(x)?, &labels).map_err(to_py)
}

#[pyfunction]
fn calinski_harabasz(x: Vec<Vec<f64>>, labels: Vec<i64>) -> PyResult<f64> {
    metrics::calinski_harabasz(&matrix(x)?, &labels).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (dataset, algorithm, weighting="unweighted", seed=0, k=None, n_trees=None, label_column=Some("class")))]
#[allow(clippy::too_many_arguments)]
fn run_experiment(
    py: Python<'_>,
    dataset: PathBuf,
    algorithm: &str,
    weighting: &str,
    seed: u64,
    k: Option<usize>,
    n_trees: Option<usize>,
    label_column: Option<&str>,
) -> PyResult<PyRunReport> {
    let mut cfg = ExperimentConfig::new(dataset, parse(algorithm)?, parse(weighting)?);
    cfg.seed = seed;
    cfg.k = k;
    cfg.label_column = Some(label_column.unwrap_or_default().to_owned());
    if let Some(n) = n_trees {
        cfg.forest.n_trees = n;
    }
    py.detach(|| fwshap::run_experiment(&cfg))
        .map(PyRunReport)
        .map_err(to_py)
}

/// Run the experiment described by a TOML config file.
#[pyfunction]
fn run_config(py: Python<'_>, path: PathBuf) -> PyResult<PyRunReport> {
    py.detach(|| fwshap::load_config(&path).and_then(|cfg| fwshap::run_experiment(&cfg)))
        .map(PyRunReport)
        .map_err(to_py)
}

/// Run a benchmark suite file, optionally resuming from and writing to
/// `out` (`.csv` or `.json`). Returns row counts.
#[pyfunction]
#[pyo3(signature = (suite, out=None))]
fn run_benchmark(py: Python<'_>, suite: PathBuf, out: Option<PathBuf>) -> PyResult<BTreeMap<&'static str, usize>> {
    let outcome = py
        .detach(|| {
            let suite = fwshap::load_suite(&suite)?;
            fwshap::run_benchmark(&suite, out.as_deref())
        })
        .map_err(to_py)?;
    Ok(BTreeMap::from([
        ("rows", outcome.records.len()),
        ("executed", outcome.executed),
        ("reused", outcome.reused),
        ("failed", outcome.failed()),
    ]))
}

#[pymodule(name = "fwshap")]
fn fwshap_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyForest>()?;
    m.add_class::<PyRunReport>()?;
    m.add_function(wrap_pyfunction!(load_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(cluster, m)?)?;
    m.add_function(wrap_pyfunction!(fit_forest, m)?)?;
    m.add_function(wrap_pyfunction!(feature_weights, m)?)?;
    m.add_function(wrap_pyfunction!(adjusted_rand_index, m)?)?;
    m.add_function(wrap_pyfunction!(normalized_mutual_information, m)?)?;
    m.add_function(wrap_pyfunction!(silhouette, m)?)?;
    m.add_function(wrap_pyfunction!(calinski_harabasz, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_benchmark, m)?)?;
    Ok(())
}
