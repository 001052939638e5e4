//! Python bindings. Matrices cross the boundary as lists of rows.

use lcn_ot::eval;
use lcn_ot::experiment::{self, Budget, OperatorSpec, RunConfig, Variant};
use lcn_ot::sinkhorn::{self as sk, CostGradient};
use lcn_ot::{CostFunction, NeighborPairs, SupportStatus};
use ndarray::{Array1, Array2};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::de::DeserializeOwned;

create_exception!(lcn_ot_py, LcnOtError, PyException, "Raised when a solver or kernel operation fails.");

fn err(e: lcn_ot::Error) -> PyErr {
    LcnOtError::new_err(e.to_string())
}

fn to_array2(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("all rows must have the same length"));
    }
    Array2::from_shape_vec((n, d), rows.concat()).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn parse_name<T: DeserializeOwned>(name: &str, what: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(name.into()))
        .map_err(|_| PyValueError::new_err(format!("unknown {what} '{name}'")))
}

#[pyclass(name = "PointSet", module = "lcn_ot_py", frozen)]
struct PyPointSet {
    inner: lcn_ot::PointSet,
}

#[pymethods]
impl PyPointSet {
    #[new]
    #[pyo3(signature = (points, id = "points"))]
    fn new(points: Vec<Vec<f64>>, id: &str) -> PyResult<Self> {
        let inner = lcn_ot::PointSet::new(to_array2(points)?, id).map_err(err)?;
        Ok(Self { inner })
    }

    /// `n` points uniform in the unit `dim`-ball.
    #[staticmethod]
    #[pyo3(signature = (n, dim, seed = 0, stream = 0))]
    fn uniform_ball(n: usize, dim: usize, seed: u64, stream: u64) -> PyResult<Self> {
        let inner = lcn_ot::data::uniform_ball(n, dim, seed, stream).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        let inner = lcn_ot::PointSet::load(&path).map_err(err)?;
        Ok(Self { inner })
    }

    #[pyo3(signature = (path, binary = false))]
    fn save(&self, path: std::path::PathBuf, binary: bool) -> PyResult<()> {
        let file = std::fs::File::create(&path).map_err(|e| err(e.into()))?;
        let w = std::io::BufWriter::new(file);
        if binary {
            self.inner.write_binary(w).map_err(err)
        } else {
            self.inner.write_text(w).map_err(err)
        }
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn to_list(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.points().to_owned())
    }

    fn __repr__(&self) -> String {
        format!("PointSet(n={}, dim={})", self.inner.len(), self.inner.dim())
    }
}

#[pyclass(name = "Marginals", module = "lcn_ot_py", frozen)]
struct PyMarginals {
    inner: lcn_ot::Marginals,
}

#[pymethods]
impl PyMarginals {
    #[new]
    fn new(p: Vec<f64>, q: Vec<f64>) -> PyResult<Self> {
        let inner = lcn_ot::Marginals::new(Array1::from(p), Array1::from(q)).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn uniform(n: usize, m: usize) -> Self {
        Self {
            inner: lcn_ot::Marginals::uniform(n, m),
        }
    }

    #[getter]
    fn p(&self) -> Vec<f64> {
        self.inner.p.to_vec()
    }

    #[getter]
    fn q(&self) -> Vec<f64> {
        self.inner.q.to_vec()
    }
}

#[pyclass(name = "KernelOperator", module = "lcn_ot_py", frozen)]
struct PyKernelOperator {
    inner: lcn_ot::KernelOperator,
}

#[pymethods]
impl PyKernelOperator {
    /// Dense kernel `exp(-C / lam)` from an explicit cost matrix.
    #[staticmethod]
    fn from_cost(cost: Vec<Vec<f64>>, lam: f64) -> PyResult<Self> {
        let values = to_array2(cost)?;
        let k = lcn_ot::build_kernel(&lcn_ot::DenseCost { values }, lam).map_err(err)?;
        Ok(Self {
            inner: lcn_ot::KernelOperator::dense(k),
        })
    }

    /// Builds `full`, `sparse`, `nystrom` or `lcn` kernels between two point
    /// sets. `total` is split evenly between neighbors and landmarks for LCN.
    #[staticmethod]
    #[pyo3(signature = (variant, p, q, lam, neighbors = None, landmarks = None, total = None, cost = "euclidean", landmark_method = "kmeans", seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn build(
        variant: &str,
        p: &PyPointSet,
        q: &PyPointSet,
        lam: f64,
        neighbors: Option<f64>,
        landmarks: Option<usize>,
        total: Option<usize>,
        cost: &str,
        landmark_method: &str,
        seed: u64,
    ) -> PyResult<Self> {
        let variant: Variant = variant.parse().map_err(err)?;
        let spec = OperatorSpec {
            cost: parse_name::<CostFunction>(cost, "cost function")?,
            budget: Budget {
                neighbors,
                landmarks,
                total,
            },
            landmark_method: parse_name(landmark_method, "landmark method")?,
            ..OperatorSpec::new(lam, seed)
        };
        let inner = experiment::build_operator(variant, &p.inner, &q.inner, &spec).map_err(err)?;
        Ok(Self { inner })
    }

    /// Copy extended for unbalanced transport with per-point deletion costs.
    fn with_bp(&self, deletion_p: Vec<f64>, deletion_q: Vec<f64>) -> PyResult<Self> {
        let bp = lcn_ot::BpExtension::from_costs(&deletion_p, &deletion_q, self.inner.lambda).map_err(err)?;
        let inner = self.inner.clone().with_bp(bp).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.inner.name()
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.inner.shape()
    }

    #[getter]
    fn lam(&self) -> f64 {
        self.inner.lambda
    }

    fn densify(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.densify())
    }

    fn matvec(&self, t: Vec<f64>) -> PyResult<Vec<f64>> {
        let t = Array1::from(t);
        Ok(self.inner.matvec(t.view()).map_err(err)?.to_vec())
    }

    fn __repr__(&self) -> String {
        let (n, m) = self.inner.shape();
        format!("KernelOperator({}, {n}x{m}, lam={})", self.inner.name(), self.inner.lambda)
    }
}

#[pyclass(name = "SinkhornResult", module = "lcn_ot_py", frozen)]
struct PySinkhornResult {
    inner: lcn_ot::SinkhornResult,
}

#[pymethods]
impl PySinkhornResult {
    #[getter]
    fn distance(&self) -> f64 {
        self.inner.distance
    }
    #[getter]
    fn iters(&self) -> usize {
        self.inner.iters
    }
    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }
    #[getter]
    fn marginal_err(&self) -> f64 {
        self.inner.marginal_err
    }
    #[getter]
    fn trace(&self) -> Vec<f64> {
        self.inner.trace.clone()
    }
    #[getter]
    fn log_s(&self) -> Vec<f64> {
        self.inner.log_s.to_vec()
    }
    #[getter]
    fn log_t(&self) -> Vec<f64> {
        self.inner.log_t.to_vec()
    }
    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.inner.warnings.clone()
    }
    #[getter]
    fn variant(&self) -> &'static str {
        self.inner.variant
    }

    /// Dense transport plan; the original block for BP-extended solves.
    fn plan(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.plan.densify())
    }

    fn row_sums(&self) -> Vec<f64> {
        self.inner.plan.row_sums().to_vec()
    }

    fn col_sums(&self) -> Vec<f64> {
        self.inner.plan.col_sums().to_vec()
    }

    fn __repr__(&self) -> String {
        format!(
            "SinkhornResult({}, distance={}, iters={}, converged={})",
            self.inner.variant, self.inner.distance, self.inner.iters, self.inner.converged
        )
    }
}

#[pyfunction]
#[pyo3(signature = (op, marginals, tol = None, max_iters = 500, check_support = true))]
fn sinkhorn(
    py: Python<'_>,
    op: &PyKernelOperator,
    marginals: &PyMarginals,
    tol: Option<f64>,
    max_iters: usize,
    check_support: bool,
) -> PyResult<PySinkhornResult> {
    let opts = lcn_ot::SinkhornOptions {
        tol,
        max_iters,
        check_support,
    };
    let inner = py
        .detach(|| lcn_ot::sinkhorn(&op.inner, &marginals.inner, &opts))
        .map_err(err)?;
    Ok(PySinkhornResult { inner })
}

/// Analytic gradients of the converged distance as a dict keyed by
/// parameter name, plus `kind` and `stale`.
#[pyfunction]
fn gradient<'py>(py: Python<'py>, op: &PyKernelOperator, result: &PySinkhornResult) -> PyResult<Bound<'py, PyDict>> {
    let g = sk::grad_cost(&op.inner, &result.inner).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("stale", g.stale)?;
    match g.grad {
        CostGradient::Dense(c) => {
            d.set_item("kind", "dense")?;
            d.set_item("cost", to_rows(&c))?;
        }
        CostGradient::Sparse { pattern, values } => {
            d.set_item("kind", "sparse")?;
            d.set_item("pairs", pattern.iter().collect::<Vec<_>>())?;
            d.set_item("cost", values)?;
        }
        CostGradient::Nystrom { u, w } => {
            d.set_item("kind", "nystrom")?;
            d.set_item("u", to_rows(&u))?;
            d.set_item("w", to_rows(&w))?;
        }
        CostGradient::Lcn {
            u,
            w,
            log_sparse,
            log_sparse_nys,
        } => {
            d.set_item("kind", "lcn")?;
            d.set_item("u", to_rows(&u))?;
            d.set_item("w", to_rows(&w))?;
            d.set_item("log_sparse", log_sparse)?;
            d.set_item("log_sparse_nys", log_sparse_nys)?;
        }
    }
    Ok(d)
}

/// Relative distance error, Pearson correlation and top-entry IoU against a
/// dense reference plan.
#[pyfunction]
fn compare_plans<'py>(
    py: Python<'py>,
    reference: Vec<Vec<f64>>,
    d_ref: f64,
    result: &PySinkhornResult,
) -> PyResult<Bound<'py, PyDict>> {
    let reference = to_array2(reference)?;
    let c = eval::compare_plans(&reference, &result.inner.plan, d_ref, result.inner.distance).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("rel_err_d", c.rel_err_d)?;
    d.set_item("pcc", c.pcc)?;
    d.set_item("iou", c.iou)?;
    Ok(d)
}

/// `"none"`, `"support"` or `"total-support"` for an `n x m` pattern.
#[pyfunction]
fn has_support(n: usize, m: usize, pairs: Vec<(usize, usize)>) -> PyResult<&'static str> {
    let pattern = NeighborPairs::from_pairs(n, m, pairs).map_err(err)?;
    Ok(match lcn_ot::has_support(&pattern) {
        SupportStatus::None => "none",
        SupportStatus::Support => "support",
        SupportStatus::TotalSupport => "total-support",
    })
}

#[pyfunction]
fn iteration_bound(op: &PyKernelOperator, marginals: &PyMarginals, eps: f64) -> PyResult<f64> {
    sk::iteration_bound(&op.inner, &marginals.inner, eps).map_err(err)
}

#[pyfunction]
fn iteration_bound_value(min_kernel: f64, min_marginal: f64, eps: f64) -> f64 {
    sk::iteration_bound_value(min_kernel, min_marginal, eps)
}

#[pyfunction]
fn multihead_lambdas(heads: usize, lam: f64) -> PyResult<Vec<f64>> {
    sk::multihead_lambdas(heads, lam).map_err(err)
}

/// Runs a JSON run configuration and returns the records as JSON.
#[pyfunction]
fn run(py: Python<'_>, config_json: &str) -> PyResult<String> {
    let cfg: RunConfig = serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let records = py.detach(|| experiment::run(&cfg)).map_err(err)?;
    serde_json::to_string(&records).map_err(|e| err(e.into()))
}

/// Kernel error study for a JSON scenario; returns the report as JSON.
#[pyfunction]
fn kernel_error_study(py: Python<'_>, scenario_json: &str) -> PyResult<String> {
    let scenario: eval::Scenario =
        serde_json::from_str(scenario_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let report = py.detach(|| eval::kernel_error_study(&scenario)).map_err(err)?;
    serde_json::to_string(&report).map_err(|e| err(e.into()))
}

#[pymodule]
fn lcn_ot_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("LcnOtError", m.py().get_type::<LcnOtError>())?;
    m.add_class::<PyPointSet>()?;
    m.add_class::<PyMarginals>()?;
    m.add_class::<PyKernelOperator>()?;
    m.add_class::<PySinkhornResult>()?;
    m.add_function(wrap_pyfunction!(sinkhorn, m)?)?;
    m.add_function(wrap_pyfunction!(gradient, m)?)?;
    m.add_function(wrap_pyfunction!(compare_plans, m)?)?;
    m.add_function(wrap_pyfunction!(has_support, m)?)?;
    m.add_function(wrap_pyfunction!(iteration_bound, m)?)?;
    m.add_function(wrap_pyfunction!(iteration_bound_value, m)?)?;
    m.add_function(wrap_pyfunction!(multihead_lambdas, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(kernel_error_study, m)?)?;
    Ok(())
}
