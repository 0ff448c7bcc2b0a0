//! Tracking `N(λ)` along a grid of regularization factors.
//!
//! Differentiating `F(λ, N(λ)) = 0` gives
//!
//! ```text
//! dN/dλ = (N(λ) + R_z(P_N)) / λ,    dP_N/dQ ∝ 1 / f̈(dP/dQ)
//! ```
//!
//! where `P` is the tilted measure at `(λ, N(λ))`. [`integrate_path`] runs a
//! fixed-step RK4 sweep of this ODE and compares every node with a direct
//! root-finding solve.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{FdrError, Result};
use crate::generators::FGenerator;
use crate::measure::SupportedMeasure;
use crate::normalize::{residual_f, residual_partials, solve_normalization, SolveConfig};
use crate::risk::{expected_risk, RiskField};
use crate::tilt::tilt_measure;

/// The measure `P_N` with `dP_N/dQ ∝ 1/f̈(dP/dQ)` at `(λ, β)`.
pub fn auxiliary_measure(
    gen: &FGenerator,
    mu: &SupportedMeasure,
    field: &RiskField,
    lambda: f64,
    beta: f64,
) -> Result<SupportedMeasure> {
    let tilted = tilt_measure(gen, mu, field, lambda, beta)?;
    let masses = mu
        .weights()
        .iter()
        .zip(tilted.rn_values())
        .map(|(q, r)| {
            let c = gen.d2f(*r);
            if c > 0.0 && c.is_finite() {
                Ok(q / c)
            } else {
                Err(FdrError::GeneratorContract(format!(
                    "{}: second derivative {c} at x = {r}",
                    gen.name()
                )))
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    SupportedMeasure::normalized(mu.points().to_vec(), masses, mu.provenance().clone())
}

/// `dN/dλ = (β + R_z(P_N)) / λ`, with `β = N(λ)` supplied by the caller.
pub fn n_derivative(gen: &FGenerator, mu: &SupportedMeasure, field: &RiskField, lambda: f64, beta: f64) -> Result<f64> {
    let aux = auxiliary_measure(gen, mu, field, lambda, beta)?;
    Ok((beta + expected_risk(&aux, field)?) / lambda)
}

/// `dN/dλ` as the implicit-function quotient `−(∂F/∂a)/(∂F/∂b)`.
///
/// Algebraically equal to [`n_derivative`]; kept as a diagnostic.
pub fn implicit_n_derivative(
    gen: &FGenerator,
    mu: &SupportedMeasure,
    field: &RiskField,
    lambda: f64,
    beta: f64,
) -> Result<f64> {
    let (d_a, d_b) = residual_partials(gen, mu, field, lambda, beta)?;
    Ok(-d_a / d_b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stepper {
    #[default]
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathConfig {
    pub solve: SolveConfig,
    pub stepper: Stepper,
    /// Largest tolerated relative deviation from the direct solves.
    pub drift_ceiling: Option<f64>,
}

impl Default for PathConfig {
    fn default() -> Self {
        PathConfig {
            solve: SolveConfig::default(),
            stepper: Stepper::Rk4,
            drift_ceiling: None,
        }
    }
}

/// Where and why a path stopped early.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Truncation {
    /// First grid node that could not be reached.
    pub lambda: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OdePath {
    pub lambdas: Vec<f64>,
    /// `N` from the ODE sweep.
    pub n_values: Vec<f64>,
    /// `N` from root-finding at each node.
    pub n_direct: Vec<f64>,
    pub max_rel_err: f64,
    pub truncated: Option<Truncation>,
}

fn rel_err(approx: f64, exact: f64) -> f64 {
    let diff = (approx - exact).abs();
    if exact == 0.0 {
        diff
    } else {
        diff / exact.abs()
    }
}

impl OdePath {
    pub fn rel_errors(&self) -> impl Iterator<Item = f64> + '_ {
        self.n_values.iter().zip(&self.n_direct).map(|(a, b)| rel_err(*a, *b))
    }

    /// CSV with columns `lambda,n_ode,n_direct,rel_err`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda,n_ode,n_direct,rel_err\n");
        for ((l, (a, b)), e) in self
            .lambdas
            .iter()
            .zip(self.n_values.iter().zip(&self.n_direct))
            .zip(self.rel_errors())
        {
            let _ = writeln!(out, "{l:.16e},{a:.16e},{b:.16e},{e:.16e}");
        }
        out
    }
}

fn rk4_step(gen: &FGenerator, mu: &SupportedMeasure, field: &RiskField, lambda: f64, n: f64, h: f64) -> Result<f64> {
    let rhs = |l: f64, y: f64| n_derivative(gen, mu, field, l, y);
    let k1 = rhs(lambda, n)?;
    let k2 = rhs(lambda + 0.5 * h, n + 0.5 * h * k1)?;
    let k3 = rhs(lambda + 0.5 * h, n + 0.5 * h * k2)?;
    let k4 = rhs(lambda + h, n + h * k3)?;
    Ok(n + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
}

/// Integrates `dN/dλ` along `grid` from `(lambda0, beta0)`.
///
/// `grid[0]` must equal `lambda0`. When a node cannot be reached (the ODE
/// leaves the feasible set or the direct solve fails) the path is
/// truncated there and the reason recorded.
pub fn integrate_path(
    gen: &FGenerator,
    mu: &SupportedMeasure,
    field: &RiskField,
    lambda0: f64,
    beta0: f64,
    grid: &[f64],
    cfg: &PathConfig,
) -> Result<OdePath> {
    cfg.solve.validate()?;
    let Some(first) = grid.first() else {
        return Err(FdrError::Config("lambda grid is empty".into()));
    };
    if *first != lambda0 {
        return Err(FdrError::Config(format!(
            "lambda grid must start at lambda0 = {lambda0}, starts at {first}"
        )));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) || !(lambda0 > 0.0) {
        return Err(FdrError::Config(
            "lambda grid must be positive and strictly increasing".into(),
        ));
    }
    let r0 = residual_f(gen, mu, field, lambda0, beta0)?;
    if r0.abs() > cfg.solve.epsilon {
        return Err(FdrError::Config(format!(
            "initial condition does not normalize: residual {r0:e} at lambda0 = {lambda0}"
        )));
    }

    let Stepper::Rk4 = cfg.stepper;
    let mut n_values = vec![beta0];
    let mut truncated = None;
    for w in grid.windows(2) {
        let n = *n_values.last().expect("path is never empty");
        match rk4_step(gen, mu, field, w[0], n, w[1] - w[0]) {
            Ok(next) => n_values.push(next),
            Err(e) => {
                truncated = Some(Truncation {
                    lambda: w[1],
                    reason: e.to_string(),
                });
                break;
            }
        }
    }

    let mut lambdas = grid[..n_values.len()].to_vec();
    let direct: Vec<Result<f64>> = lambdas
        .par_iter()
        .map(|l| solve_normalization(gen, mu, field, *l, &cfg.solve).map(|r| r.beta))
        .collect();
    let mut n_direct = Vec::with_capacity(direct.len());
    for (l, d) in lambdas.iter().zip(direct) {
        match d {
            Ok(b) => n_direct.push(b),
            Err(e) => {
                truncated = Some(Truncation {
                    lambda: *l,
                    reason: e.to_string(),
                });
                break;
            }
        }
    }
    lambdas.truncate(n_direct.len());
    n_values.truncate(n_direct.len());

    let mut path = OdePath {
        lambdas,
        n_values,
        n_direct,
        max_rel_err: 0.0,
        truncated,
    };
    path.max_rel_err = path.rel_errors().fold(0.0, f64::max);
    if let Some(ceiling) = cfg.drift_ceiling {
        if let Some((l, e)) = path.lambdas.iter().zip(path.rel_errors()).find(|(_, e)| *e > ceiling) {
            return Err(FdrError::Drift {
                lambda: *l,
                rel_err: e,
                ceiling,
            });
        }
    }
    Ok(path)
}

/// `n` points evenly spaced over `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let h = (hi - lo) / (n - 1) as f64;
            let mut v: Vec<f64> = (0..n).map(|k| lo + h * k as f64).collect();
            v[n - 1] = hi;
            v
        }
    }
}

/// `n` points evenly spaced in `log λ` over `[lo, hi]`.
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = linspace(lo.ln(), hi.ln(), n).into_iter().map(f64::exp).collect();
    if let Some(first) = v.first_mut() {
        *first = lo;
    }
    if n > 1 {
        v[n - 1] = hi;
    }
    v
}
