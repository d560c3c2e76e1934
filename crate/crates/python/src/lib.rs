//! Python bindings. Matrices cross the boundary as lists of rows (any
//! sequence of float sequences, numpy arrays included); structured reports
//! come back as dicts.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use gshlab::expcli::{self, ExperimentConfig as CoreConfig};
use gshlab::gshmetrics::GshReport;
use gshlab::manifolds::{generate_dataset, Augmentation, FamilySpec, LatentConfig, ManifoldFamily};
use gshlab::net::{train, ArchConfig, GshModel, TrainConfig};
use gshlab::numlin::{Grouped, Matrix, SeededRng};
use gshlab::transfer::{self, HashTable as CoreTable};

create_exception!(pygshlab, GshError, PyException);

fn err(e: gshlab::GshError) -> PyErr {
    GshError::new_err(e.to_string())
}

fn to_matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    Matrix::from_rows(&rows).map_err(err)
}

fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn grouped(rows: Vec<Vec<f64>>, m: usize, n: usize) -> PyResult<Grouped> {
    Grouped::new(m, n, to_matrix(rows)?).map_err(err)
}

fn to_py<T: serde::Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| GshError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// Closed-form ReLU dual activation for unit inputs with inner product `eta`.
#[pyfunction]
fn dual_activation(eta: f64) -> PyResult<f64> {
    gshlab::kernelview::dual_activation(eta).map_err(err)
}

/// Random-feature Gram matrix of the columns of `x`.
#[pyfunction]
fn mc_gram(x: Vec<Vec<f64>>, width: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let g = gshlab::kernelview::mc_gram(&to_matrix(x)?, width, &mut SeededRng::new(seed)).map_err(err)?;
    Ok(to_rows(&g))
}

#[pyclass(module = "pygshlab")]
struct ExperimentConfig {
    inner: CoreConfig,
}

#[pymethods]
impl ExperimentConfig {
    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        Ok(Self {
            inner: CoreConfig::preset(name).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: CoreConfig::from_toml(text).map_err(err)?,
        })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml().map_err(err)
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    fn validate(&self) -> Vec<String> {
        self.inner.validate()
    }

    fn reseed(&mut self, root: u64) {
        self.inner.reseed(root);
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner)
    }
}

/// Runs every stage; returns the run directory.
#[pyfunction]
fn run_pipeline(config: &ExperimentConfig, out: PathBuf) -> PyResult<String> {
    std::fs::create_dir_all(&out).map_err(|e| err(e.into()))?;
    let dir = expcli::run_pipeline(config.inner.clone(), &out).map_err(err)?;
    Ok(dir.display().to_string())
}

#[pyclass(module = "pygshlab")]
struct Dataset {
    inner: gshlab::manifolds::Dataset,
}

#[pymethods]
impl Dataset {
    /// `m` manifolds of the named family with `n` samples each, inputs
    /// augmented with the half bias.
    #[staticmethod]
    #[pyo3(signature = (family, m, n, d=30, s=8, k=8, family_seed=11, seed=1))]
    #[allow(clippy::too_many_arguments)]
    fn generate(family: &str, m: usize, n: usize, d: usize, s: usize, k: usize, family_seed: u64, seed: u64) -> PyResult<Self> {
        let spec = FamilySpec::preset(family, d, s, k, family_seed).map_err(err)?;
        let fam = ManifoldFamily::build(&spec).map_err(err)?;
        let inner = generate_dataset(&fam, &LatentConfig::experiment(s, k), m, n, Augmentation::BiasHalf, seed)
            .map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn points(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.points.data)
    }

    #[getter]
    fn gammas(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.gammas)
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.labels()
    }
}

#[pyclass(module = "pygshlab")]
struct Model {
    inner: GshModel,
    #[pyo3(get)]
    lr_halvings: usize,
    #[pyo3(get)]
    final_loss: f64,
}

#[pymethods]
impl Model {
    /// Full-batch training on a dataset with the first layer frozen.
    #[staticmethod]
    #[pyo3(signature = (data, width=512, rep_dim=64, lambda1=1e-3, lambda2=1e-3, use_vreg=true, lr=1.0, steps=1000, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        py: Python<'_>,
        data: &Dataset,
        width: usize,
        rep_dim: usize,
        lambda1: f64,
        lambda2: f64,
        use_vreg: bool,
        lr: f64,
        steps: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let arch = ArchConfig {
            width,
            rep_dim,
            train_c: false,
        };
        let cfg = TrainConfig {
            lambda1,
            lambda2,
            use_vreg,
            lr,
            steps,
            seed,
            ..TrainConfig::default()
        };
        let ds = &data.inner;
        let res = py
            .detach(|| train(&ds.points, ds.augmentation, &arch, &cfg))
            .map_err(err)?;
        Ok(Self {
            final_loss: res.final_loss().total,
            lr_halvings: res.lr_halvings,
            inner: res.model,
        })
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: GshModel::load(&dir).map_err(err)?,
            lr_halvings: 0,
            final_loss: f64::NAN,
        })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.inner.save(&dir, serde_json::Value::Null).map_err(err)
    }

    fn represent(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(to_rows(&self.inner.represent(&to_matrix(x)?).map_err(err)?))
    }

    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(to_rows(&self.inner.predict(&to_matrix(x)?).map_err(err)?))
    }

    fn classify(&self, x: Vec<f64>) -> PyResult<usize> {
        self.inner.classify(&x).map_err(err)
    }

    fn zero_one_error(&self, data: &Dataset) -> PyResult<f64> {
        self.inner.zero_one_error(&data.inner.points).map_err(err)
    }

    #[getter]
    fn rep_dim(&self) -> usize {
        self.inner.rep_dim()
    }
}

/// GSH metrics of representations grouped `m × n` (manifold-major rows).
#[pyfunction]
fn gsh_report(py: Python<'_>, reps: Vec<Vec<f64>>, m: usize, n: usize) -> PyResult<Py<PyAny>> {
    let r = GshReport::compute(&grouped(reps, m, n)?).map_err(err)?;
    to_py(py, &r)
}

/// Enrolls sample 0 of each manifold and queries the rest.
#[pyfunction]
fn oneshot_eval(py: Python<'_>, reps: Vec<Vec<f64>>, m: usize, n: usize, epsilon: f64) -> PyResult<Py<PyAny>> {
    let r = transfer::oneshot_eval_reps(&grouped(reps, m, n)?, epsilon).map_err(err)?;
    to_py(py, &r)
}

#[pyclass(module = "pygshlab")]
struct HashTable {
    inner: CoreTable,
}

#[pymethods]
impl HashTable {
    #[new]
    fn new(epsilon: f64) -> PyResult<Self> {
        Ok(Self {
            inner: CoreTable::new(epsilon).map_err(err)?,
        })
    }

    fn enroll(&mut self, r: Vec<f64>, class: usize) -> PyResult<()> {
        self.inner.enroll(&r, class).map_err(err)
    }

    /// Class of the nearest anchor within the threshold, else None.
    fn lookup(&self, r: Vec<f64>) -> Option<usize> {
        self.inner.lookup(&r)
    }

    #[getter]
    fn threshold(&self) -> f64 {
        self.inner.threshold()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Oracle suite summary.
#[pyfunction]
fn lemmas(py: Python<'_>, seed: u64) -> PyResult<Py<PyAny>> {
    let s = py.detach(|| expcli::lemmas(seed));
    to_py(py, &s)
}

#[pymodule]
fn pygshlab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("GshError", m.py().get_type::<GshError>())?;
    m.add_class::<ExperimentConfig>()?;
    m.add_class::<Dataset>()?;
    m.add_class::<Model>()?;
    m.add_class::<HashTable>()?;
    m.add_function(wrap_pyfunction!(dual_activation, m)?)?;
    m.add_function(wrap_pyfunction!(mc_gram, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(gsh_report, m)?)?;
    m.add_function(wrap_pyfunction!(oneshot_eval, m)?)?;
    m.add_function(wrap_pyfunction!(lemmas, m)?)?;
    Ok(())
}
