//! Python module `attn_margin_py`. Vectors and matrices cross the boundary
//! as lists of floats and lists of rows.

use std::path::PathBuf;

use attn_margin::experiments::{self, ExperimentConfig};
use attn_margin::linalg::{matrix_from_rows, matrix_to_rows};
use attn_margin::model::{self, AttentionParams};
use attn_margin::optim::{self, GdConfig};
use attn_margin::{geometry, svm, Error, LossKind, Matrix, TokenDataset, Vector};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(msg) => PyOSError::new_err(msg),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Matrix> {
    matrix_from_rows(rows).ok_or_else(|| PyValueError::new_err("matrix rows must be nonempty and of equal length"))
}

fn matrices(rows: Vec<Vec<Vec<f64>>>) -> PyResult<Vec<Matrix>> {
    rows.iter().map(|m| matrix(m)).collect()
}

fn loss_kind(name: &str) -> PyResult<LossKind> {
    name.parse().map_err(py_err)
}

fn to_vec(v: &Vector) -> Vec<f64> {
    v.iter().copied().collect()
}

#[pyclass(name = "Dataset", module = "attn_margin_py", from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: TokenDataset,
}

#[pymethods]
impl PyDataset {
    /// `tokens[i]` is the `T_i × d` token matrix of input `i`. Keys are
    /// `X_i W^T` when `w` is given, else `keys` or the tokens themselves.
    #[new]
    #[pyo3(signature = (tokens, labels, keys=None, w=None))]
    fn new(tokens: Vec<Vec<Vec<f64>>>, labels: Vec<f64>, keys: Option<Vec<Vec<Vec<f64>>>>, w: Option<Vec<Vec<f64>>>) -> PyResult<Self> {
        let xs = matrices(tokens)?;
        if labels.len() != xs.len() {
            return Err(PyValueError::new_err(format!("{} labels for {} inputs", labels.len(), xs.len())));
        }
        let inner = match (keys, w) {
            (Some(_), Some(_)) => return Err(PyValueError::new_err("give keys or w, not both")),
            (None, Some(w)) => TokenDataset::from_key_query(xs, labels, matrix(&w)?).map_err(py_err)?,
            (keys, None) => {
                let ks = match keys {
                    Some(k) => matrices(k)?,
                    None => xs.clone(),
                };
                if ks.len() != xs.len() {
                    return Err(PyValueError::new_err("keys and tokens differ in length"));
                }
                let inputs = xs
                    .into_iter()
                    .zip(ks)
                    .zip(labels)
                    .map(|((x, k), y)| attn_margin::InputRecord::new(x, k, y))
                    .collect::<attn_margin::Result<Vec<_>>>()
                    .map_err(py_err)?;
                TokenDataset::new(inputs, None).map_err(py_err)?
            }
        };
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: TokenDataset::from_json_str(text).map_err(py_err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: TokenDataset::load(path).map_err(py_err)? })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json_string().map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(py_err)
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.dim()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn keys(&self) -> Vec<Vec<Vec<f64>>> {
        self.inner.keys().iter().map(matrix_to_rows).collect()
    }

    fn labels(&self) -> Vec<f64> {
        self.inner.labels()
    }

    fn __repr__(&self) -> String {
        format!("Dataset(n={}, d={}, tokens={:?})", self.inner.len(), self.inner.dim(), self.inner.token_counts())
    }
}

#[pyclass(name = "SvmSolution", module = "attn_margin_py", get_all, skip_from_py_object)]
struct PySvmSolution {
    solution: Vec<f64>,
    norm: f64,
    margin: Option<f64>,
    status: String,
    /// `(input, competing token)` pairs holding with equality.
    active: Vec<(usize, usize)>,
    duals: Vec<f64>,
    json: String,
}

impl PySvmSolution {
    fn wrap(s: &svm::SvmSolution) -> PyResult<Self> {
        Ok(Self {
            solution: to_vec(&s.solution),
            norm: s.norm,
            margin: s.margin,
            status: s.status.to_string(),
            active: s.active.iter().map(|c| (c.i, c.t)).collect(),
            duals: s.duals.clone(),
            json: s.to_json_string().map_err(py_err)?,
        })
    }
}

#[pymethods]
impl PySvmSolution {
    fn is_optimal(&self) -> bool {
        self.status == "optimal"
    }

    fn to_json(&self) -> String {
        self.json.clone()
    }

    fn __repr__(&self) -> String {
        format!("SvmSolution(status={}, norm={}, active={:?})", self.status, self.norm, self.active)
    }
}

/// Min-norm `p` with `p^T (k_{iα_i} − k_{it}) ≥ 1` for all `t ≠ α_i`.
#[pyfunction]
fn att_svm(keys: Vec<Vec<Vec<f64>>>, alpha: Vec<usize>) -> PyResult<PySvmSolution> {
    PySvmSolution::wrap(&svm::att_svm(&matrices(keys)?, &alpha).map_err(py_err)?)
}

/// Same program by exhaustive active-set enumeration (small problems only).
#[pyfunction]
fn qp_oracle(keys: Vec<Vec<Vec<f64>>>, alpha: Vec<usize>) -> PyResult<PySvmSolution> {
    PySvmSolution::wrap(&svm::qp_oracle(&matrices(keys)?, &alpha).map_err(py_err)?)
}

/// Returns `(dataset, v)`.
#[pyfunction]
fn random_dataset(n: usize, t: usize, d: usize, seed: u64) -> PyResult<(PyDataset, Vec<f64>)> {
    let (ds, v) = experiments::generate_random_dataset(n, t, d, seed).map_err(py_err)?;
    Ok((PyDataset { inner: ds }, to_vec(&v)))
}

/// Reference instance by name, e.g. `"fig1a"`; returns `(dataset, v)`.
#[pyfunction]
fn builtin(name: &str) -> PyResult<(PyDataset, Vec<f64>)> {
    let b = experiments::builtin(name).map_err(py_err)?;
    Ok((PyDataset { inner: b.dataset }, to_vec(&b.v)))
}

fn params(p: Vec<f64>, v: Vec<f64>) -> AttentionParams {
    AttentionParams::new(Vector::from_vec(p), Vector::from_vec(v))
}

#[pyfunction]
#[pyo3(signature = (dataset, p, v, kind="logistic"))]
fn loss(dataset: &PyDataset, p: Vec<f64>, v: Vec<f64>, kind: &str) -> PyResult<f64> {
    model::loss(&dataset.inner, &params(p, v), loss_kind(kind)?).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (dataset, p, v, kind="logistic"))]
fn grad_p(dataset: &PyDataset, p: Vec<f64>, v: Vec<f64>, kind: &str) -> PyResult<Vec<f64>> {
    Ok(to_vec(&model::grad_p(&dataset.inner, &params(p, v), loss_kind(kind)?).map_err(py_err)?))
}

#[pyfunction]
fn predict(dataset: &PyDataset, p: Vec<f64>, v: Vec<f64>) -> PyResult<Vec<f64>> {
    model::predict(&dataset.inner, &params(p, v)).map_err(py_err)
}

/// `γ_it = Y_i v^T x_it` per input.
#[pyfunction]
fn token_scores(dataset: &PyDataset, v: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
    Ok(model::token_scores(&dataset.inner, &Vector::from_vec(v)).map_err(py_err)?.rows().to_vec())
}

/// `(avg_max_prob, avg_sparsity)` of the attention maps at `p`.
#[pyfunction]
fn saturation(dataset: &PyDataset, p: Vec<f64>) -> PyResult<(f64, f64)> {
    let m = geometry::saturation_metrics(&dataset.inner, &Vector::from_vec(p)).map_err(py_err)?;
    Ok((m.avg_max_prob, m.avg_sparsity))
}

/// Runs GD (or normalized GD) on `p` and returns the trajectory as a dict of
/// columns plus `final` (the last iterate) and `stop` (the stop reason).
#[pyfunction]
#[pyo3(signature = (dataset, v, p0, eta, steps, kind="logistic", normalized=false, target=None))]
#[allow(clippy::too_many_arguments)]
fn gradient_descent(
    py: Python<'_>,
    dataset: &PyDataset,
    v: Vec<f64>,
    p0: Vec<f64>,
    eta: f64,
    steps: usize,
    kind: &str,
    normalized: bool,
    target: Option<Vec<f64>>,
) -> PyResult<Py<pyo3::types::PyDict>> {
    let mut cfg = GdConfig::new(eta, steps);
    if let Some(t) = target {
        cfg = cfg.with_target(Vector::from_vec(t));
    }
    let (v, p0, kind) = (Vector::from_vec(v), Vector::from_vec(p0), loss_kind(kind)?);
    let run = if normalized { optim::normalized_gd } else { optim::gd };
    let traj = run(&dataset.inner, &v, kind, &p0, &cfg).map_err(py_err)?;
    let out = pyo3::types::PyDict::new(py);
    let col = |f: fn(&optim::StepRecord) -> f64| traj.records.iter().map(f).collect::<Vec<f64>>();
    out.set_item("step", traj.records.iter().map(|r| r.step).collect::<Vec<_>>())?;
    out.set_item("norm", col(|r| r.norm))?;
    out.set_item("loss", col(|r| r.loss))?;
    out.set_item("grad_norm", col(|r| r.grad_norm))?;
    out.set_item("corr", traj.records.iter().map(|r| r.corr).collect::<Vec<_>>())?;
    out.set_item("max_prob", col(|r| r.max_prob))?;
    out.set_item("sparsity", col(|r| r.sparsity))?;
    out.set_item("final", to_vec(&traj.final_iterate))?;
    out.set_item("stop", serde_json::to_value(traj.stop_reason).map_err(|e| PyValueError::new_err(e.to_string()))?.as_str().unwrap_or_default())?;
    Ok(out.unbind())
}

/// Runs a scenario into `out` and returns its summary as a JSON string.
#[pyfunction]
#[pyo3(signature = (scenario, out, config_json=None))]
fn run_scenario(scenario: &str, out: PathBuf, config_json: Option<&str>) -> PyResult<String> {
    let mut cfg = match config_json {
        Some(text) => ExperimentConfig::from_json_str(text).map_err(py_err)?,
        None => ExperimentConfig::default(),
    };
    cfg.scenario = Some(scenario.to_string());
    let summary = experiments::run_scenario(&cfg, &out).map_err(py_err)?;
    serde_json::to_string(&summary).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// `(id, name, passed, detail)` per acceptance criterion; empty `ids` runs all.
#[pyfunction]
#[pyo3(signature = (ids=Vec::new()))]
fn run_checks(py: Python<'_>, ids: Vec<u8>) -> Vec<(u8, String, bool, String)> {
    py.detach(|| experiments::run_checks(&ids))
        .into_iter()
        .map(|r| (r.id, r.name.to_string(), r.passed, r.detail))
        .collect()
}

#[pyfunction]
fn scenarios() -> Vec<&'static str> {
    experiments::SCENARIOS.to_vec()
}

#[pymodule]
fn attn_margin_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PySvmSolution>()?;
    m.add_function(wrap_pyfunction!(att_svm, m)?)?;
    m.add_function(wrap_pyfunction!(qp_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(random_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(builtin, m)?)?;
    m.add_function(wrap_pyfunction!(loss, m)?)?;
    m.add_function(wrap_pyfunction!(grad_p, m)?)?;
    m.add_function(wrap_pyfunction!(predict, m)?)?;
    m.add_function(wrap_pyfunction!(token_scores, m)?)?;
    m.add_function(wrap_pyfunction!(saturation, m)?)?;
    m.add_function(wrap_pyfunction!(gradient_descent, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(run_checks, m)?)?;
    m.add_function(wrap_pyfunction!(scenarios, m)?)?;
    Ok(())
}
