//! Python bindings. Structured results cross the boundary as JSON and come
//! out as plain dicts and lists.

use std::sync::Arc;

use hypoparam::coefficients::{check_assumptions, mollify, CoefficientSet, MollifierConfig, PresetParams, SampleSpec};
use hypoparam::experiments::{
    centering_experiment, kolmogorov_experiment, mollify_experiment, scaling_experiment, solve_experiment,
    uniqueness_experiment, CenteringConfig, ExperimentOutput, KolmogorovConfig, MollifyConfig, ScalingConfig,
    SolveConfig, UniquenessConfig,
};
use hypoparam::kernel::{self, DerivMode, DerivOrder};
use hypoparam::parametrix::{self, GridSolution, GridSpec, PicardConfig, QuadratureSpec};
use hypoparam::sde::{self, BrownianPath};
use hypoparam::tolerances::Tolerances;
use hypoparam::transport::{self, FrozenFrame, OdeGridConfig};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn err(e: hypoparam::Error) -> PyErr {
    match e {
        hypoparam::Error::InvalidArgument(m) => PyValueError::new_err(m),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, v: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    PyModule::import(py, "json")?.call_method1("loads", (text,))
}

/// Drift, diffusion and metadata of one model.
#[pyclass(name = "Coefficients", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyCoefficients(CoefficientSet);

#[pymethods]
impl PyCoefficients {
    #[staticmethod]
    fn kolmogorov(alpha: f64) -> PyResult<Self> {
        CoefficientSet::kolmogorov(alpha).map(Self).map_err(err)
    }

    #[staticmethod]
    #[pyo3(signature = (beta, dim = 1))]
    fn holder(beta: f64, dim: usize) -> PyResult<Self> {
        CoefficientSet::holder(beta, dim).map(Self).map_err(err)
    }

    #[staticmethod]
    #[pyo3(signature = (gamma, kappa = 0.0))]
    fn linear_gamma(gamma: Vec<f64>, kappa: f64) -> PyResult<Self> {
        CoefficientSet::linear_gamma(gamma, kappa).map(Self).map_err(err)
    }

    #[staticmethod]
    fn lipschitz() -> Self {
        Self(CoefficientSet::lipschitz())
    }

    #[staticmethod]
    #[pyo3(signature = (name, alpha = 1.0, beta = 0.8, gamma = 1.0, kappa = 0.0))]
    fn preset(name: &str, alpha: f64, beta: f64, gamma: f64, kappa: f64) -> PyResult<Self> {
        CoefficientSet::preset(name, &PresetParams { alpha, beta, gamma, kappa }).map(Self).map_err(err)
    }

    #[getter]
    fn name(&self) -> String {
        self.0.name.clone()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim
    }

    fn drift(&self, t: f64, x: Vec<f64>) -> Vec<f64> {
        self.0.drift(t, &x)
    }

    /// Row-major `σσ*`.
    fn a_matrix(&self, t: f64, x: Vec<f64>) -> Vec<f64> {
        self.0.a_matrix(t, &x)
    }

    fn d1f2(&self, t: f64, x: Vec<f64>) -> Vec<f64> {
        self.0.d1f2_matrix(t, &x)
    }

    fn mollify(&self, n: usize) -> PyResult<Self> {
        let cfg = MollifierConfig::new(n, self.0.dim, None).map_err(err)?;
        mollify(&self.0, &cfg).map(Self).map_err(err)
    }

    #[pyo3(signature = (count = 2000, seed = 1, low = -2.0, high = 2.0))]
    fn check_assumptions<'py>(&self, py: Python<'py>, count: usize, seed: u64, low: f64, high: f64) -> PyResult<Bound<'py, PyAny>> {
        let spec = SampleSpec { low, high, count, seed, ..Default::default() };
        let report = check_assumptions(&self.0, &spec).map_err(err)?;
        let pass = report.all_pass();
        let out = to_py(py, &report)?;
        out.set_item("all_pass", pass)?;
        Ok(out)
    }

    fn __repr__(&self) -> String {
        format!("Coefficients({:?}, dim={})", self.0.name, self.0.dim)
    }
}

/// Linearized transport and Gaussian moments frozen at `(tau, xi)`.
#[pyclass(name = "FrozenFrame", frozen)]
struct PyFrame(Arc<FrozenFrame>);

fn order(o: (u8, u8, u8)) -> PyResult<DerivOrder> {
    DerivOrder::new(o.0, o.1, o.2).map_err(err)
}

#[pymethods]
impl PyFrame {
    #[new]
    fn new(coeffs: &PyCoefficients, tau: f64, xi: Vec<f64>, horizon: f64) -> PyResult<Self> {
        FrozenFrame::new(&coeffs.0, tau, &xi, horizon, OdeGridConfig::default()).map(|f| Self(Arc::new(f))).map_err(err)
    }

    fn theta(&self, s: f64) -> PyResult<Vec<f64>> {
        self.0.theta(s).map_err(err)
    }

    fn mean(&self, t: f64, s: f64, x: Vec<f64>) -> PyResult<Vec<f64>> {
        transport::mean(&self.0, t, s, &x).map_err(err)
    }

    fn covariance(&self, t: f64, s: f64) -> PyResult<Vec<Vec<f64>>> {
        transport::covariance(&self.0, t, s).map(|c| c.to_rows()).map_err(err)
    }

    fn density(&self, t: f64, x: Vec<f64>, s: f64, y: Vec<f64>) -> PyResult<f64> {
        kernel::qtilde_density(&self.0, t, &x, s, &y).map_err(err)
    }

    /// Flattened derivative tensor for `order = (n_x1, n_x2, n_y1)`.
    #[pyo3(signature = (t, x, s, y, order, finite_difference = false))]
    fn derivative(&self, t: f64, x: Vec<f64>, s: f64, y: Vec<f64>, order: (u8, u8, u8), finite_difference: bool) -> PyResult<Vec<f64>> {
        let mode = if finite_difference { DerivMode::FiniteDifference } else { DerivMode::Analytic };
        kernel::qtilde_derivative(&self.0, t, &x, s, &y, self::order(order)?, mode).map(|d| d.data).map_err(err)
    }

    fn grad_y(&self, t: f64, x: Vec<f64>, s: f64, y: Vec<f64>) -> PyResult<Vec<f64>> {
        kernel::qtilde_grad_y(&self.0, t, &x, s, &y).map_err(err)
    }
}

/// Grid solution of a Picard solve.
#[pyclass(name = "Solution", frozen)]
struct PySolution {
    sol: GridSolution,
    report: String,
}

#[pymethods]
impl PySolution {
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.sol.times.clone()
    }

    #[getter]
    fn x1(&self) -> Vec<f64> {
        self.sol.x1.clone()
    }

    #[getter]
    fn x2(&self) -> Vec<f64> {
        self.sol.x2.clone()
    }

    /// Values indexed `[k][i][j]`, flattened.
    #[getter]
    fn u(&self) -> Vec<f64> {
        self.sol.u.clone()
    }

    #[getter]
    fn report<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        PyModule::import(py, "json")?.call_method1("loads", (self.report.as_str(),))
    }

    fn value(&self, k: usize, i: usize, j: usize) -> PyResult<f64> {
        if k >= self.sol.times.len() || i >= self.sol.x1.len() || j >= self.sol.x2.len() {
            return Err(PyValueError::new_err("grid index out of range"));
        }
        Ok(self.sol.u[self.sol.index(k, i, j)])
    }

    #[pyo3(signature = (gamma = 0.3, pair_samples = 0, seed = 7))]
    fn diagnostics<'py>(&self, py: Python<'py>, gamma: f64, pair_samples: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
        let d = parametrix::derivative_diagnostics(&self.sol, gamma, pair_samples, seed).map_err(err)?;
        to_py(py, &d)
    }

    fn csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.sol.write_csv(&mut buf).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        String::from_utf8(buf).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }
}

#[pyfunction]
fn kolmogorov_density(alpha: f64, s: f64, x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    kernel::kolmogorov_density(alpha, s, &x, &y).map_err(err)
}

#[pyfunction]
fn kolmogorov_covariance(alpha: f64, s: f64) -> Vec<Vec<f64>> {
    transport::kolmogorov_covariance(alpha, s).to_rows()
}

/// Euler endpoint from `(t, x)` over `steps` uniform steps.
#[pyfunction]
#[pyo3(signature = (coeffs, x, t, horizon, steps, seed, stream = 0))]
fn euler_terminal(coeffs: &PyCoefficients, x: Vec<f64>, t: f64, horizon: f64, steps: usize, seed: u64, stream: u64) -> PyResult<Vec<f64>> {
    if steps == 0 || !(horizon > t) {
        return Err(PyValueError::new_err("need steps > 0 and horizon > t"));
    }
    let path = BrownianPath::generate(coeffs.0.dim, (horizon - t) / steps as f64, steps, seed, stream);
    sde::euler_terminal(&coeffs.0, &x, t, horizon, &path).map_err(err)
}

#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (coeffs, x, t = 0.0, horizon = 1.0, h0 = 0.015625, levels = 5, n_paths = 1000, seed = 7))]
fn dual_refinement<'py>(
    py: Python<'py>,
    coeffs: &PyCoefficients,
    x: Vec<f64>,
    t: f64,
    horizon: f64,
    h0: f64,
    levels: usize,
    n_paths: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let set = coeffs.0.clone();
    let rows = py
        .detach(move || sde::dual_refinement_experiment(&set, &x, t, horizon, h0, levels, n_paths, seed))
        .map_err(err)?;
    to_py(py, &rows)
}

/// Picard iteration on a square grid. `source` is `"holder"` or `"manufactured"`.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (coeffs, horizon, source = "holder", nodes = 25, half_width = 4.0, steps_per_unit_time = 32, time_panels = 8, beta = 0.8))]
fn picard_solve(
    py: Python<'_>,
    coeffs: &PyCoefficients,
    horizon: f64,
    source: &str,
    nodes: usize,
    half_width: f64,
    steps_per_unit_time: usize,
    time_panels: usize,
    beta: f64,
) -> PyResult<PySolution> {
    let src = match source {
        "holder" => parametrix::holder_source(beta),
        "manufactured" => parametrix::manufactured_source(&coeffs.0, horizon),
        other => return Err(PyValueError::new_err(format!("unknown source {other}"))),
    };
    let set = coeffs.0.clone();
    let spec = GridSpec::square(horizon, half_width, nodes, steps_per_unit_time);
    let cfg = PicardConfig { quad: QuadratureSpec { time_panels, ..Default::default() }, ..Default::default() };
    let out = py.detach(move || parametrix::picard_solve(&set, &src, &spec, &cfg)).map_err(err)?;
    let report = serde_json::to_string(&out.report).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(PySolution { sol: out.solution, report })
}

/// Runs one experiment with its default configuration.
#[pyfunction]
fn experiment<'py>(py: Python<'py>, name: &str) -> PyResult<Bound<'py, PyAny>> {
    let tol = Tolerances::default();
    let run: fn(&Tolerances) -> hypoparam::Result<ExperimentOutput> = match name {
        "kolmogorov" => |t| kolmogorov_experiment(&KolmogorovConfig::default(), t),
        "scaling" => |t| scaling_experiment(&ScalingConfig::default(), t),
        "uniqueness" => |t| uniqueness_experiment(&UniquenessConfig::default(), t),
        "solve" => |t| solve_experiment(&SolveConfig::default(), t),
        "mollify" => |t| mollify_experiment(&MollifyConfig::default(), t),
        "centering" => |t| centering_experiment(&CenteringConfig::default(), t),
        other => return Err(PyValueError::new_err(format!("unknown experiment {other}"))),
    };
    let out = py.detach(move || run(&tol)).map_err(err)?;
    let pass = out.pass();
    let d = to_py(py, &out)?;
    d.set_item("pass", pass)?;
    Ok(d)
}

/// Same as the command-line tool; returns the exit code.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    let argv: Vec<String> = std::iter::once("hypoparam".to_string()).chain(args).collect();
    py.detach(move || hypoparam::cli::run(argv))
}

#[pymodule]
#[pyo3(name = "hypoparam")]
fn hypoparam_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCoefficients>()?;
    m.add_class::<PyFrame>()?;
    m.add_class::<PySolution>()?;
    m.add_function(wrap_pyfunction!(kolmogorov_density, m)?)?;
    m.add_function(wrap_pyfunction!(kolmogorov_covariance, m)?)?;
    m.add_function(wrap_pyfunction!(euler_terminal, m)?)?;
    m.add_function(wrap_pyfunction!(dual_refinement, m)?)?;
    m.add_function(wrap_pyfunction!(picard_solve, m)?)?;
    m.add_function(wrap_pyfunction!(experiment, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
