//! Python bindings. Structured results come back as plain dicts parsed from the
//! same JSON the CLI writes.

use batchbound::geometry::{self, Subspace};
use batchbound::harness::{self, ExperimentConfig, SweepGrid, VerifyParams, VerifyTarget};
use batchbound::mdp::{self, Family, HardInstance, Sign, State, StateAction};
use batchbound::packing::{self, Packing};
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn vector(x: Vec<f64>) -> DVector<f64> {
    DVector::from_vec(x)
}

fn state(s: Option<Vec<f64>>) -> State {
    s.map_or(State::Start, |p| State::Point(vector(p)))
}

fn parse_family(s: &str) -> PyResult<Family> {
    s.parse().map_err(err)
}

fn parse_sign(s: i32) -> PyResult<Sign> {
    match s {
        1 => Ok(Sign::Plus),
        -1 => Ok(Sign::Minus),
        _ => Err(PyValueError::new_err("sign must be 1 or -1")),
    }
}

/// An `m`-dimensional subspace of R^d with an orthonormal basis.
#[pyclass(name = "Subspace", module = "batchbound_py", frozen, from_py_object)]
#[derive(Clone)]
struct PySubspace(Subspace);

#[pymethods]
impl PySubspace {
    /// Span of the given vectors in R^d.
    #[staticmethod]
    fn span(vectors: Vec<Vec<f64>>, d: usize) -> PyResult<Self> {
        let vs: Vec<_> = vectors.into_iter().map(vector).collect();
        Subspace::span(&vs, d).map(Self).map_err(err)
    }

    /// Basis given as a list of `m` orthonormal columns of length `d`.
    #[staticmethod]
    fn from_basis(columns: Vec<Vec<f64>>) -> PyResult<Self> {
        let d = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != d) {
            return Err(PyValueError::new_err("basis columns differ in length"));
        }
        let m = DMatrix::from_iterator(d, columns.len(), columns.into_iter().flatten());
        Subspace::from_orthonormal(m).map(Self).map_err(err)
    }

    #[staticmethod]
    fn random(d: usize, m: usize, seed: u64) -> PyResult<Self> {
        Subspace::random(d, m, &mut ChaCha8Rng::seed_from_u64(seed)).map(Self).map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        serde_json::from_str(text).map(Self).map_err(err)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(err)
    }

    #[getter]
    fn ambient_dim(&self) -> usize {
        self.0.ambient_dim()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn basis(&self) -> Vec<Vec<f64>> {
        self.0.columns().into_iter().map(|c| c.as_slice().to_vec()).collect()
    }

    fn project(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.0.project(&vector(x)).map(|p| p.as_slice().to_vec()).map_err(err)
    }

    fn sector_contains(&self, gamma: f64, x: Vec<f64>) -> PyResult<bool> {
        if x.len() != self.0.ambient_dim() {
            return Err(PyValueError::new_err("dimension mismatch"));
        }
        Ok(geometry::sector_contains(&self.0, gamma, &vector(x)))
    }

    fn principal_angles(&self, other: &PySubspace) -> PyResult<Vec<f64>> {
        geometry::principal_angles(&self.0, &other.0).map(|p| p.angles).map_err(err)
    }

    fn chordal_distance(&self, other: &PySubspace) -> PyResult<f64> {
        geometry::chordal_distance(&self.0, &other.0).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Subspace(ambient_dim={}, dim={})", self.0.ambient_dim(), self.0.dim())
    }
}

/// A family of equal-dimension subspaces with small pairwise cross cosines.
#[pyclass(name = "Packing", module = "batchbound_py", frozen)]
struct PyPacking(Packing);

#[pymethods]
impl PyPacking {
    #[new]
    fn new(gamma: f64, members: Vec<PySubspace>) -> PyResult<Self> {
        Packing::new(gamma, members.into_iter().map(|s| s.0).collect()).map(Self).map_err(err)
    }

    /// Random packing of `size` members whose pairwise cross cosines stay below `g(gamma)`.
    #[staticmethod]
    #[pyo3(signature = (d, m, size, gamma, seed = 0))]
    fn search(d: usize, m: usize, size: usize, gamma: f64, seed: u64) -> PyResult<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        harness::random_verified_packing(d, m, size, gamma, &mut rng).map(Self).map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        serde_json::from_str(text).map(Self).map_err(err)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn members(&self) -> Vec<PySubspace> {
        self.0.members().iter().cloned().map(PySubspace).collect()
    }

    fn verify<'py>(&self, py: Python<'py>, dmin: f64) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &packing::verify_packing(&self.0, dmin).map_err(err)?)
    }

    /// Index of a member whose sector holds none of `queries`.
    fn pigeonhole_select(&self, queries: Vec<Vec<f64>>) -> PyResult<usize> {
        let qs: Vec<_> = queries.into_iter().map(vector).collect();
        packing::pigeonhole_select(&self.0, &qs).map(|c| c.index).map_err(err)
    }
}

/// A committed hard instance of the PE or BPI family.
#[pyclass(name = "HardInstance", module = "batchbound_py", frozen)]
struct PyInstance(HardInstance);

#[pymethods]
impl PyInstance {
    #[staticmethod]
    #[pyo3(signature = (family, d, dims, gamma = 0.9, sign = 1, seed = 0))]
    fn sample(family: &str, d: usize, dims: Vec<usize>, gamma: f64, sign: i32, seed: u64) -> PyResult<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        HardInstance::random(parse_family(family)?, d, &dims, parse_sign(sign)?, gamma, &mut rng)
            .map(Self)
            .map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        serde_json::from_str(text).map(Self).map_err(err)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(err)
    }

    #[getter]
    fn d(&self) -> usize {
        self.0.d()
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.0.gamma()
    }

    #[getter]
    fn family(&self) -> String {
        self.0.family().to_string()
    }

    #[getter]
    fn sign(&self) -> f64 {
        self.0.sign().value()
    }

    #[getter]
    fn w(&self) -> Vec<f64> {
        self.0.w().as_slice().to_vec()
    }

    fn flipped(&self) -> Self {
        Self(self.0.flipped())
    }

    fn classify(&self, x: Vec<f64>) -> PyResult<String> {
        if x.len() != self.0.d() {
            return Err(PyValueError::new_err("dimension mismatch"));
        }
        Ok(self.0.classify(&vector(x)).to_string())
    }

    /// `state=None` is the start state.
    #[pyo3(signature = (action, state = None))]
    fn reward(&self, action: Vec<f64>, state: Option<Vec<f64>>) -> PyResult<f64> {
        self.0.reward(&StateAction::new(self::state(state), vector(action))).map_err(err)
    }

    #[pyo3(signature = (action, state = None))]
    fn successor(&self, action: Vec<f64>, state: Option<Vec<f64>>) -> PyResult<Vec<f64>> {
        self.0
            .successor(&StateAction::new(self::state(state), vector(action)))
            .map(|x| x.as_slice().to_vec())
            .map_err(err)
    }

    #[pyo3(signature = (action, state = None))]
    fn q_value(&self, action: Vec<f64>, state: Option<Vec<f64>>) -> PyResult<f64> {
        self.0.true_q(&StateAction::new(self::state(state), vector(action))).map_err(err)
    }

    #[pyo3(signature = (state = None))]
    fn target_policy(&self, state: Option<Vec<f64>>) -> Vec<f64> {
        self.0.target_policy(&self::state(state)).as_slice().to_vec()
    }

    #[pyo3(signature = (samples = 1000, seed = 0))]
    fn verify_realizability<'py>(&self, py: Python<'py>, samples: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &mdp::verify_realizability(&self.0, samples, seed).map_err(err)?)
    }

    /// Runs the exact solver against this instance.
    #[pyo3(signature = (gamma = None))]
    fn solve<'py>(&self, py: Python<'py>, gamma: Option<f64>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &harness::solve_instance(&self.0, gamma).map_err(err)?)
    }
}

/// Plays one game from a JSON config. Returns `{report, transcript, certificate}`.
#[pyfunction]
fn simulate<'py>(py: Python<'py>, config: &str) -> PyResult<Bound<'py, PyAny>> {
    let cfg = ExperimentConfig::from_json(config).map_err(err)?;
    let result = harness::cmd_simulate(&cfg).map_err(err)?;
    let out = pyo3::types::PyDict::new(py);
    out.set_item("report", to_py(py, &result.report)?)?;
    out.set_item("transcript", result.transcript.to_jsonl())?;
    out.set_item("certificate", to_py(py, &result.certificate)?)?;
    Ok(out.into_any())
}

/// Runs every cell of a JSON sweep grid and returns the rows as dicts.
#[pyfunction]
#[pyo3(signature = (grid, jobs = 1))]
fn sweep<'py>(py: Python<'py>, grid: &str, jobs: usize) -> PyResult<Bound<'py, PyAny>> {
    let grid: SweepGrid = serde_json::from_str(grid).map_err(err)?;
    let rows = py.detach(|| harness::cmd_sweep(&grid, jobs)).map_err(err)?;
    to_py(py, &rows)
}

#[pyfunction]
#[pyo3(signature = (d, k, gamma, n_total = None))]
fn bounds<'py>(py: Python<'py>, d: usize, k: usize, gamma: f64, n_total: Option<f64>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &packing::budget_report(d, k, gamma, n_total).map_err(err)?)
}

#[pyfunction]
fn multi_batch_schedule(d: usize, k: usize) -> PyResult<Vec<usize>> {
    batchbound::adversary::multi_batch_schedule(d, k).map(|s| s.dims).map_err(err)
}

/// `target` is one of `realizability`, `geometry`, `packing`.
#[pyfunction]
#[pyo3(signature = (target, d, samples = 1000, trials = 1000, gamma = 0.9, seed = 0))]
fn verify<'py>(
    py: Python<'py>,
    target: &str,
    d: Vec<usize>,
    samples: usize,
    trials: usize,
    gamma: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let target: VerifyTarget = serde_json::from_value(serde_json::Value::String(target.into())).map_err(err)?;
    let params = VerifyParams {
        d,
        samples,
        trials,
        gamma,
        seed,
    };
    to_py(py, &harness::cmd_verify(target, &params).map_err(err)?)
}

#[pymodule]
fn batchbound_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySubspace>()?;
    m.add_class::<PyPacking>()?;
    m.add_class::<PyInstance>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(bounds, m)?)?;
    m.add_function(wrap_pyfunction!(multi_batch_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(g_of_gamma, m)?)?;
    Ok(())
}

#[pyfunction]
fn g_of_gamma(gamma: f64) -> f64 {
    packing::g_of_gamma(gamma)
}
