//! Python bindings: dataset generation, the search pipeline, and the AUC
//! metric, mirroring the CLI's synthetic-table setup.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use autofas_core::data;
use autofas_core::eval;
use autofas_core::latency::synthetic_latency_table;
use autofas_core::report::op_string;
use autofas_core::search;
use autofas_core::supernet;
use autofas_core::teacher;

fn py_err(e: autofas_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "DatasetSpec")]
struct PyDatasetSpec {
    inner: data::DatasetSpec,
}

#[pymethods]
impl PyDatasetSpec {
    #[new]
    #[pyo3(signature = (
        num_features=None, num_informative=None, num_queries=None,
        items_per_query=None, vocab_size=None, embedding_dim=None,
        label_noise=None, seed=None
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        num_features: Option<usize>,
        num_informative: Option<usize>,
        num_queries: Option<usize>,
        items_per_query: Option<usize>,
        vocab_size: Option<usize>,
        embedding_dim: Option<usize>,
        label_noise: Option<f64>,
        seed: Option<u64>,
    ) -> Self {
        let mut inner = data::DatasetSpec::default();
        if let Some(v) = num_features {
            inner.num_features = v;
        }
        if let Some(v) = num_informative {
            inner.num_informative = v;
        }
        if let Some(v) = num_queries {
            inner.num_queries = v;
        }
        if let Some(v) = items_per_query {
            inner.items_per_query = v;
        }
        if let Some(v) = vocab_size {
            inner.vocab_size = v;
        }
        if let Some(v) = embedding_dim {
            inner.embedding_dim = v;
        }
        if let Some(v) = label_noise {
            inner.label_noise = v;
        }
        if let Some(v) = seed {
            inner.seed = v;
        }
        PyDatasetSpec { inner }
    }

    fn __repr__(&self) -> String {
        format!(
            "DatasetSpec(num_features={}, num_informative={}, num_queries={}, \
             items_per_query={}, seed={})",
            self.inner.num_features,
            self.inner.num_informative,
            self.inner.num_queries,
            self.inner.items_per_query,
            self.inner.seed
        )
    }
}

#[pyclass(name = "Dataset")]
struct PyDataset {
    inner: data::Dataset,
}

#[pymethods]
impl PyDataset {
    #[getter]
    fn num_features(&self) -> usize {
        self.inner.num_features()
    }

    #[getter]
    fn input_width(&self) -> usize {
        self.inner.input_width()
    }

    fn __len__(&self) -> usize {
        self.inner.examples.len()
    }

    /// Labels of all examples, in order.
    fn labels(&self) -> Vec<u8> {
        self.inner.examples.iter().map(|e| e.label).collect()
    }

    /// Write `<base>.features.tsv` / `<base>.examples.tsv`.
    fn save(&self, base: &str) -> PyResult<()> {
        data::write_dataset(std::path::Path::new(base), &self.inner).map_err(py_err)
    }

    #[staticmethod]
    fn load(base: &str) -> PyResult<PyDataset> {
        data::read_dataset(std::path::Path::new(base))
            .map(|inner| PyDataset { inner })
            .map_err(py_err)
    }
}

/// Generate a synthetic click dataset; returns (dataset, planted feature ids).
#[pyfunction]
fn generate(spec: &PyDatasetSpec) -> PyResult<(PyDataset, Vec<usize>)> {
    let (ds, planted) = data::generate(&spec.inner).map_err(py_err)?;
    Ok((PyDataset { inner: ds }, planted.into_iter().collect()))
}

#[pyclass(name = "TeacherConfig")]
struct PyTeacherConfig {
    inner: teacher::TeacherConfig,
}

#[pymethods]
impl PyTeacherConfig {
    #[new]
    #[pyo3(signature = (tower=None))]
    fn new(tower: Option<Vec<usize>>) -> Self {
        let mut inner = teacher::TeacherConfig::default();
        if let Some(t) = tower {
            inner.tower = t;
        }
        PyTeacherConfig { inner }
    }
}

#[pyclass(name = "SupernetConfig")]
struct PySupernetConfig {
    inner: supernet::SupernetConfig,
}

#[pymethods]
impl PySupernetConfig {
    #[new]
    #[pyo3(signature = (num_mixops=None, unit_choices=None, include_zero=None))]
    fn new(
        num_mixops: Option<usize>,
        unit_choices: Option<Vec<usize>>,
        include_zero: Option<bool>,
    ) -> Self {
        let mut inner = supernet::SupernetConfig::default();
        if let Some(v) = num_mixops {
            inner.num_mixops = v;
        }
        if let Some(v) = unit_choices {
            inner.unit_choices = v;
        }
        if let Some(v) = include_zero {
            inner.include_zero = v;
        }
        PySupernetConfig { inner }
    }
}

#[pyclass(name = "SearchConfig")]
struct PySearchConfig {
    inner: search::SearchConfig,
}

#[pymethods]
impl PySearchConfig {
    #[new]
    #[pyo3(signature = (
        warmup_steps=None, search_steps=None, retrain_steps=None,
        batch_size=None, top_n_features=None, learning_rate=None, seed=None,
        gradient_block=None, teacher_masked_kd=None, recall_k=None,
        recall_m=None, lam=None, lambda1=None, lambda2=None
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        warmup_steps: Option<usize>,
        search_steps: Option<usize>,
        retrain_steps: Option<usize>,
        batch_size: Option<usize>,
        top_n_features: Option<usize>,
        learning_rate: Option<f64>,
        seed: Option<u64>,
        gradient_block: Option<bool>,
        teacher_masked_kd: Option<bool>,
        recall_k: Option<usize>,
        recall_m: Option<usize>,
        lam: Option<f64>,
        lambda1: Option<f64>,
        lambda2: Option<f64>,
    ) -> Self {
        let mut inner = search::SearchConfig::default();
        if let Some(v) = warmup_steps {
            inner.warmup_steps = v;
        }
        if let Some(v) = search_steps {
            inner.search_steps = v;
        }
        if let Some(v) = retrain_steps {
            inner.retrain_steps = v;
        }
        if let Some(v) = batch_size {
            inner.batch_size = v;
        }
        if let Some(v) = top_n_features {
            inner.top_n_features = v;
        }
        if let Some(v) = learning_rate {
            inner.learning_rate = v;
        }
        if let Some(v) = seed {
            inner.seed = v;
        }
        if let Some(v) = gradient_block {
            inner.gradient_block = v;
        }
        if let Some(v) = teacher_masked_kd {
            inner.teacher_masked_kd = v;
        }
        if let Some(v) = recall_k {
            inner.recall_k = v;
        }
        if let Some(v) = recall_m {
            inner.recall_m = v;
        }
        if let Some(v) = lam {
            inner.cp.lambda = v;
        }
        if let Some(v) = lambda1 {
            inner.cp.lambda1 = v;
        }
        if let Some(v) = lambda2 {
            inner.cp.lambda2 = v;
        }
        PySearchConfig { inner }
    }
}

#[pyclass(name = "SearchOutcome")]
struct PySearchOutcome {
    inner: search::SearchOutcome,
}

#[pymethods]
impl PySearchOutcome {
    #[getter]
    fn feature_ids(&self) -> Vec<usize> {
        self.inner.selection.feature_ids.clone()
    }

    /// Operator per Mixop as "mlp:<width>" or "zero".
    #[getter]
    fn operators(&self) -> Vec<String> {
        self.inner
            .selection
            .operators
            .iter()
            .map(|&op| op_string(op))
            .collect()
    }

    /// Tower widths of the derived model (zero operators collapsed away).
    #[getter]
    fn layer_widths(&self) -> Vec<usize> {
        self.inner.selection.layer_widths()
    }

    #[getter]
    fn theta(&self) -> Vec<f64> {
        self.inner.theta.clone()
    }

    #[getter]
    fn strengths(&self) -> Vec<Vec<f64>> {
        self.inner.strengths.clone()
    }

    #[getter]
    fn retrain_auc(&self) -> f64 {
        self.inner.retrain_auc
    }

    #[getter]
    fn teacher_auc(&self) -> f64 {
        self.inner.teacher_auc
    }

    #[getter]
    fn recall(&self) -> f64 {
        self.inner.recall
    }

    #[getter]
    fn feature_latency_ms(&self) -> f64 {
        self.inner.feature_latency_ms
    }

    #[getter]
    fn arch_latency_ms(&self) -> f64 {
        self.inner.arch_latency_ms
    }

    fn __repr__(&self) -> String {
        format!(
            "SearchOutcome(features={:?}, operators={:?}, retrain_auc={:.4}, recall={:.4})",
            self.inner.selection.feature_ids,
            self.operators(),
            self.inner.retrain_auc,
            self.inner.recall
        )
    }
}

/// Run warmup, joint search, derivation, retraining, and evaluation with a
/// synthetic (FLOP-proxy) latency table. Deterministic given the seed.
#[pyfunction]
fn run_search(
    dataset: &PyDataset,
    teacher: &PyTeacherConfig,
    supernet: &PySupernetConfig,
    config: &PySearchConfig,
) -> PyResult<PySearchOutcome> {
    let table = synthetic_latency_table(&supernet.inner, dataset.inner.input_width());
    search::run_search(
        &dataset.inner,
        &teacher.inner,
        &supernet.inner,
        &config.inner,
        &table,
    )
    .map(|inner| PySearchOutcome { inner })
    .map_err(py_err)
}

/// Rank-statistics AUC with half credit for ties.
#[pyfunction]
fn auc(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    eval::auc(&scores, &labels).map_err(py_err)
}

#[pymodule]
fn autofas(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDatasetSpec>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyTeacherConfig>()?;
    m.add_class::<PySupernetConfig>()?;
    m.add_class::<PySearchConfig>()?;
    m.add_class::<PySearchOutcome>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(run_search, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    Ok(())
}
