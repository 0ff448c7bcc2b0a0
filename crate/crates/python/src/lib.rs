//! Python bindings for `fdiv-erm`.

use std::path::PathBuf;

use fdiv_erm::continuation::{self, PathConfig};
use fdiv_erm::experiment::{self, ExperimentConfig};
use fdiv_erm::generators::{builtin_generator, ExtendedReal};
use fdiv_erm::measure::builtin_density;
use fdiv_erm::normalize::SolveConfig;
use fdiv_erm::risk::{build_builtin_risk_field, Dataset, Loss, ModelRule};
use fdiv_erm::{
    dual, normalize, tilt as tilting, FGenerator, FdrError, GridSpec, Provenance, RiskField, SupportedMeasure,
};
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

create_exception!(
    fdiv_erm,
    SolverError,
    PyValueError,
    "Raised for invalid inputs and failed solves."
);

fn to_py(err: FdrError) -> PyErr {
    SolverError::new_err(err.to_string())
}

fn extended(x: ExtendedReal) -> f64 {
    match x {
        ExtendedReal::NegInfinity => f64::NEG_INFINITY,
        ExtendedReal::Finite(v) => v,
        ExtendedReal::PosInfinity => f64::INFINITY,
    }
}

/// An f-divergence generator with its derivatives and conjugate.
#[pyclass(frozen, module = "fdiv_erm")]
struct Generator {
    inner: FGenerator,
}

#[pymethods]
impl Generator {
    /// `kl`, `reverse_kl`, `chi_square` or `squared_hellinger`.
    #[new]
    fn new(name: &str) -> PyResult<Self> {
        Ok(Generator {
            inner: builtin_generator(name).map_err(to_py)?,
        })
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.inner.name()
    }

    fn f(&self, x: f64) -> f64 {
        self.inner.f(x)
    }

    fn df(&self, x: f64) -> f64 {
        self.inner.df(x)
    }

    fn d2f(&self, x: f64) -> f64 {
        self.inner.d2f(x)
    }

    fn df_inv(&self, t: f64) -> PyResult<f64> {
        self.inner.df_inv(t).map_err(to_py)
    }

    fn conjugate(&self, t: f64) -> PyResult<f64> {
        self.inner.conjugate(t).map_err(to_py)
    }

    /// `lim_{x→0+} ḟ(x)`, possibly `-inf`.
    #[getter]
    fn df_at_zero(&self) -> f64 {
        extended(self.inner.df_at_zero())
    }

    fn __repr__(&self) -> String {
        format!("Generator('{}')", self.inner.name())
    }
}

/// A finitely supported probability measure.
#[pyclass(frozen, module = "fdiv_erm")]
struct Measure {
    inner: SupportedMeasure,
}

#[pymethods]
impl Measure {
    #[new]
    fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> PyResult<Self> {
        Ok(Measure {
            inner: SupportedMeasure::new(points, weights, Provenance::Discrete).map_err(to_py)?,
        })
    }

    /// Equal weights on scalar atoms.
    #[staticmethod]
    fn uniform(atoms: Vec<f64>) -> PyResult<Self> {
        Ok(Measure {
            inner: SupportedMeasure::uniform_scalar(&atoms).map_err(to_py)?,
        })
    }

    /// A built-in density (`gaussian`, `laplace`, `uniform`) on a uniform grid.
    #[staticmethod]
    fn grid(density: &str, low: f64, high: f64, nodes: usize) -> PyResult<Self> {
        let d = builtin_density(density).map_err(to_py)?;
        Ok(Measure {
            inner: fdiv_erm::discretize_density(d, &GridSpec::Uniform { low, high, nodes }).map_err(to_py)?,
        })
    }

    #[getter]
    fn points(&self) -> Vec<Vec<f64>> {
        self.inner.points().to_vec()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Measure(<{} atoms>)", self.inner.len())
    }
}

#[pyclass(frozen, get_all, module = "fdiv_erm")]
struct SolveResult {
    beta: f64,
    residual: f64,
    iterations: usize,
    bracket: (f64, f64),
    feasible: bool,
}

#[pyclass(frozen, get_all, module = "fdiv_erm")]
struct DualResult {
    beta_hat: f64,
    dual_value: f64,
    primal_value: f64,
    gap: f64,
    grad_norm_at_opt: f64,
    iterations: usize,
}

#[pyclass(frozen, get_all, module = "fdiv_erm")]
struct CertificateResult {
    lambda_: f64,
    beta: f64,
    beta_hat: f64,
    primal_value: f64,
    dual_value: f64,
    gap: f64,
    beta_agreement: f64,
    holds: bool,
}

#[pyclass(frozen, get_all, module = "fdiv_erm")]
struct Tilted {
    lambda_: f64,
    beta: f64,
    rn_values: Vec<f64>,
    tilted_weights: Vec<f64>,
    total_mass: f64,
    divergence: f64,
    primal_value: f64,
}

#[pyclass(frozen, get_all, module = "fdiv_erm")]
struct Path {
    lambdas: Vec<f64>,
    n_values: Vec<f64>,
    n_direct: Vec<f64>,
    max_rel_err: f64,
    truncated_at: Option<f64>,
}

fn solve_config(epsilon: f64, max_iters: usize) -> SolveConfig {
    SolveConfig {
        epsilon,
        max_iters,
        ..SolveConfig::default()
    }
}

fn field(measure: &Measure, risks: Vec<f64>) -> PyResult<RiskField> {
    RiskField::aligned(risks, &measure.inner).map_err(to_py)
}

/// Risk values `L_z(θ)` at the support of `measure` for a dataset of
/// `(x, y)` pairs.
#[pyfunction]
#[pyo3(signature = (measure, pairs, loss = "squared", model = "linear"))]
fn empirical_risk(
    measure: PyRef<'_, Measure>,
    pairs: Vec<(Vec<f64>, f64)>,
    loss: &str,
    model: &str,
) -> PyResult<Vec<f64>> {
    let loss = match loss {
        "squared" => Loss::Squared,
        "absolute" => Loss::Absolute,
        "zero_one" => Loss::ZeroOneMargin { margin: 0.0 },
        other => return Err(SolverError::new_err(format!("config: unknown loss `{other}`"))),
    };
    let model = match model {
        "linear" => ModelRule::Linear,
        "affine" => ModelRule::Affine,
        other => return Err(SolverError::new_err(format!("config: unknown model `{other}`"))),
    };
    let data = Dataset::new(pairs).map_err(to_py)?;
    let f = build_builtin_risk_field(&data, model, loss, &measure.inner).map_err(to_py)?;
    Ok(f.values().to_vec())
}

/// `N(λ)` by bracketed root finding.
#[pyfunction]
#[pyo3(signature = (generator, measure, risks, lam, *, epsilon = 1e-10, max_iters = 200))]
fn solve(
    generator: PyRef<'_, Generator>,
    measure: PyRef<'_, Measure>,
    risks: Vec<f64>,
    lam: f64,
    epsilon: f64,
    max_iters: usize,
) -> PyResult<SolveResult> {
    let f = field(&measure, risks)?;
    let r = normalize::solve_normalization(
        &generator.inner,
        &measure.inner,
        &f,
        lam,
        &solve_config(epsilon, max_iters),
    )
    .map_err(to_py)?;
    Ok(SolveResult {
        beta: r.beta,
        residual: r.residual,
        iterations: r.iterations,
        bracket: r.bracket,
        feasible: r.feasible,
    })
}

/// Minimizes the dual objective.
#[pyfunction]
#[pyo3(signature = (generator, measure, risks, lam, *, epsilon = 1e-10, max_iters = 200))]
fn solve_dual(
    generator: PyRef<'_, Generator>,
    measure: PyRef<'_, Measure>,
    risks: Vec<f64>,
    lam: f64,
    epsilon: f64,
    max_iters: usize,
) -> PyResult<DualResult> {
    let f = field(&measure, risks)?;
    let r = dual::solve_dual(
        &generator.inner,
        &measure.inner,
        &f,
        lam,
        &solve_config(epsilon, max_iters),
    )
    .map_err(to_py)?;
    Ok(DualResult {
        beta_hat: r.beta_hat,
        dual_value: r.dual_value,
        primal_value: r.primal_value,
        gap: r.gap,
        grad_norm_at_opt: r.grad_norm_at_opt,
        iterations: r.iterations,
    })
}

/// Solves both problems and checks zero gap and `2ε` agreement.
#[pyfunction]
#[pyo3(signature = (generator, measure, risks, lam, *, epsilon = 1e-10, max_iters = 200, gap_tol = 1e-8))]
fn certify(
    generator: PyRef<'_, Generator>,
    measure: PyRef<'_, Measure>,
    risks: Vec<f64>,
    lam: f64,
    epsilon: f64,
    max_iters: usize,
    gap_tol: f64,
) -> PyResult<CertificateResult> {
    let f = field(&measure, risks)?;
    let c = dual::certify(
        &generator.inner,
        &measure.inner,
        &f,
        lam,
        &solve_config(epsilon, max_iters),
    )
    .map_err(to_py)?;
    Ok(CertificateResult {
        lambda_: c.lambda,
        beta: c.primal.beta,
        beta_hat: c.dual.beta_hat,
        primal_value: c.dual.primal_value,
        dual_value: c.dual.dual_value,
        gap: c.dual.gap,
        beta_agreement: c.beta_agreement,
        holds: c.holds(gap_tol, epsilon),
    })
}

/// The tilted measure at `(λ, β)`, without renormalization.
#[pyfunction]
fn tilt(
    generator: PyRef<'_, Generator>,
    measure: PyRef<'_, Measure>,
    risks: Vec<f64>,
    lam: f64,
    beta: f64,
) -> PyResult<Tilted> {
    let f = field(&measure, risks)?;
    let sol = tilting::tilt_measure(&generator.inner, &measure.inner, &f, lam, beta).map_err(to_py)?;
    Ok(Tilted {
        lambda_: lam,
        beta,
        rn_values: sol.rn_values().to_vec(),
        tilted_weights: sol.tilted_weights().to_vec(),
        total_mass: sol.total_mass(),
        divergence: tilting::f_divergence(&generator.inner, &sol).map_err(to_py)?,
        primal_value: tilting::primal_value(&generator.inner, &sol, &f).map_err(to_py)?,
    })
}

/// Estimate of the left end of the feasible set of `λ`, searched over
/// `probe_range`. Returns `(value, at_or_below_lower)`.
#[pyfunction]
#[pyo3(signature = (generator, measure, risks, probe_range = (1e-6, 1e3), *, epsilon = 1e-10, max_iters = 200))]
fn lambda_star(
    generator: PyRef<'_, Generator>,
    measure: PyRef<'_, Measure>,
    risks: Vec<f64>,
    probe_range: (f64, f64),
    epsilon: f64,
    max_iters: usize,
) -> PyResult<(f64, bool)> {
    let f = field(&measure, risks)?;
    let e = normalize::estimate_lambda_star(
        &generator.inner,
        &measure.inner,
        &f,
        probe_range,
        &solve_config(epsilon, max_iters),
    )
    .map_err(to_py)?;
    Ok((e.value, e.at_or_below_lower))
}

/// `dN/dλ` at `(λ, β = N(λ))`.
#[pyfunction]
fn n_derivative(
    generator: PyRef<'_, Generator>,
    measure: PyRef<'_, Measure>,
    risks: Vec<f64>,
    lam: f64,
    beta: f64,
) -> PyResult<f64> {
    let f = field(&measure, risks)?;
    continuation::n_derivative(&generator.inner, &measure.inner, &f, lam, beta).map_err(to_py)
}

/// RK4 integration of `N` along `grid`, started from a direct solve at
/// `grid[0]`.
#[pyfunction]
#[pyo3(signature = (generator, measure, risks, grid, *, epsilon = 1e-10, max_iters = 200))]
fn path(
    generator: PyRef<'_, Generator>,
    measure: PyRef<'_, Measure>,
    risks: Vec<f64>,
    grid: Vec<f64>,
    epsilon: f64,
    max_iters: usize,
) -> PyResult<Path> {
    let f = field(&measure, risks)?;
    let cfg = PathConfig {
        solve: solve_config(epsilon, max_iters),
        ..PathConfig::default()
    };
    let Some(&lambda0) = grid.first() else {
        return Err(to_py(FdrError::Config("lambda grid is empty".into())));
    };
    let beta0 = normalize::solve_normalization(&generator.inner, &measure.inner, &f, lambda0, &cfg.solve)
        .map_err(to_py)?
        .beta;
    let p = continuation::integrate_path(&generator.inner, &measure.inner, &f, lambda0, beta0, &grid, &cfg)
        .map_err(to_py)?;
    Ok(Path {
        truncated_at: p.truncated.as_ref().map(|t| t.lambda),
        lambdas: p.lambdas,
        n_values: p.n_values,
        n_direct: p.n_direct,
        max_rel_err: p.max_rel_err,
    })
}

/// Runs a JSON experiment config. Writes artifacts when `out_dir` is
/// given and returns the summary as JSON text.
#[pyfunction]
#[pyo3(signature = (config_json, out_dir = None))]
fn run_experiment(py: Python<'_>, config_json: &str, out_dir: Option<PathBuf>) -> PyResult<String> {
    let cfg = ExperimentConfig::from_json(config_json).map_err(to_py)?;
    let outcome = py
        .detach(|| match &out_dir {
            Some(dir) => experiment::run_experiment(&cfg, dir),
            None => experiment::run(&cfg),
        })
        .map_err(to_py)?;
    serde_json::to_string(&outcome.summary).map_err(|e| to_py(e.into()))
}

#[pymodule]
#[pyo3(name = "fdiv_erm")]
fn fdiv_erm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SolverError", m.py().get_type::<SolverError>())?;
    m.add_class::<Generator>()?;
    m.add_class::<Measure>()?;
    m.add_class::<SolveResult>()?;
    m.add_class::<DualResult>()?;
    m.add_class::<CertificateResult>()?;
    m.add_class::<Tilted>()?;
    m.add_class::<Path>()?;
    m.add_function(wrap_pyfunction!(empirical_risk, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(solve_dual, m)?)?;
    m.add_function(wrap_pyfunction!(certify, m)?)?;
    m.add_function(wrap_pyfunction!(tilt, m)?)?;
    m.add_function(wrap_pyfunction!(lambda_star, m)?)?;
    m.add_function(wrap_pyfunction!(n_derivative, m)?)?;
    m.add_function(wrap_pyfunction!(path, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
