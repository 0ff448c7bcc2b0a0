//! Legendre-Fenchel dual of the regularized risk minimization.
//!
//! The dual objective is
//!
//! ```text
//! G(β) = λ ∫ f*(−(β + L_z(θ))/λ) dQ(θ) + β
//! ```
//!
//! which is strictly convex with `G'(β) = 1 − ∫ ḟ⁻¹(−(β + L)/λ) dQ`. Its
//! minimizer coincides with the normalization function, and
//! `min primal = −min G`. [`solve_dual`] minimizes `G` without going
//! through the normalization solver, so agreement between the two is a
//! genuine check.

use serde::Serialize;

use crate::error::{FdrError, Result, Side};
use crate::generators::FGenerator;
use crate::measure::SupportedMeasure;
use crate::normalize::{solve_normalization, SolveConfig, SolveReport};
use crate::risk::{expected_risk, RiskField};
use crate::tilt::{check_lambda, primal_value, tilt_argument, tilt_measure};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualReport {
    pub beta_hat: f64,
    /// `G(β̂)`.
    pub dual_value: f64,
    pub primal_value: f64,
    /// `primal − (−G(β̂))`.
    pub gap: f64,
    pub grad_norm_at_opt: f64,
    pub iterations: usize,
}

fn conjugate_at(gen: &FGenerator, beta: f64, t: f64, eval: impl Fn(&FGenerator, f64) -> Result<f64>) -> Result<f64> {
    eval(gen, t).map_err(|e| match e {
        FdrError::Domain { side, .. } => FdrError::InfiniteConjugate { beta, t, side },
        other => other,
    })
}

fn integrate_conjugate(
    gen: &FGenerator,
    mu: &SupportedMeasure,
    field: &RiskField,
    lambda: f64,
    beta: f64,
    eval: impl Fn(&FGenerator, f64) -> Result<f64>,
) -> Result<f64> {
    check_lambda(lambda)?;
    field.check_aligned(mu.len())?;
    let values = field.values();
    mu.expectation_indexed(|i| {
        let t = tilt_argument(lambda, beta, values[i]);
        conjugate_at(gen, beta, t, &eval)
    })
}

/// `G(β) = λ ∫ f*(−(β + L)/λ) dQ + β`.
pub fn dual_objective(
    gen: &FGenerator,
    mu: &SupportedMeasure,
    field: &RiskField,
    lambda: f64,
    beta: f64,
) -> Result<f64> {
    let integral = integrate_conjugate(gen, mu, field, lambda, beta, |g, t| g.conjugate(t))?;
    Ok(lambda * integral + beta)
}

/// `G'(β) = 1 − ∫ f*'(−(β + L)/λ) dQ`.
pub fn dual_gradient(
    gen: &FGenerator,
    mu: &SupportedMeasure,
    field: &RiskField,
    lambda: f64,
    beta: f64,
) -> Result<f64> {
    let integral = integrate_conjugate(gen, mu, field, lambda, beta, |g, t| g.conjugate_derivative(t))?;
    Ok(1.0 - integral)
}

/// `G''(β) = (1/λ) ∫ f*''(−(β + L)/λ) dQ`.
pub fn dual_curvature(
    gen: &FGenerator,
    mu: &SupportedMeasure,
    field: &RiskField,
    lambda: f64,
    beta: f64,
) -> Result<f64> {
    let integral = integrate_conjugate(gen, mu, field, lambda, beta, |g, t| g.conjugate_second_derivative(t))?;
    Ok(integral / lambda)
}

struct Dual<'a> {
    gen: &'a FGenerator,
    mu: &'a SupportedMeasure,
    field: &'a RiskField,
    lambda: f64,
}

enum Slope {
    Finite(f64),
    Outside(Side),
}

impl Dual<'_> {
    fn slope(&self, beta: f64) -> Result<Slope> {
        match dual_gradient(self.gen, self.mu, self.field, self.lambda, beta) {
            Ok(g) if g.is_nan() => Err(FdrError::GeneratorContract(format!(
                "{}: dual gradient is NaN at beta = {beta}",
                self.gen.name()
            ))),
            Ok(g) => Ok(Slope::Finite(g)),
            Err(FdrError::InfiniteConjugate { side, .. }) => Ok(Slope::Outside(side)),
            Err(e) => Err(e),
        }
    }

    fn infeasible(&self, a: f64, b: f64) -> FdrError {
        FdrError::InfeasibleLambda {
            lambda: self.lambda,
            bracket: (a.min(b), a.max(b)),
        }
    }

    /// First β in the dual domain, walking from `start` away from the side
    /// the conjugate blew up on.
    fn feasible_start(&self, start: f64, cfg: &SolveConfig) -> Result<(f64, f64)> {
        let mut beta = start;
        let mut step = self.lambda.max(1.0);
        let mut walls: (Option<f64>, Option<f64>) = (None, None);
        for _ in 0..=cfg.max_bracket_expansions {
            match self.slope(beta)? {
                Slope::Finite(g) => return Ok((beta, g)),
                // t above the domain ⇔ β too small
                Slope::Outside(Side::Above) => walls.0 = Some(beta),
                Slope::Outside(Side::Below) => walls.1 = Some(beta),
            }
            beta = match walls {
                (Some(lo), Some(hi)) => 0.5 * (lo + hi),
                (Some(lo), None) => lo + step,
                (None, Some(hi)) => hi - step,
                (None, None) => unreachable!(),
            };
            step *= cfg.bracket_growth;
        }
        Err(self.infeasible(walls.0.unwrap_or(start), walls.1.unwrap_or(start)))
    }

    /// Walks from a feasible `(from, g_from)` in direction `dir` until the
    /// gradient changes sign. Returns the last point before the change and
    /// the first point after it.
    fn walk(&self, from: (f64, f64), dir: f64, cfg: &SolveConfig) -> Result<((f64, f64), (f64, f64))> {
        let crossed = |g: f64| if dir > 0.0 { g > 0.0 } else { g < 0.0 };
        let mut prev = from;
        let mut wall: Option<f64> = None;
        let mut step = self.lambda.max(1.0);
        for _ in 0..cfg.max_bracket_expansions {
            let trial = match wall {
                Some(w) => {
                    let m = 0.5 * (prev.0 + w);
                    if m == prev.0 || m == w {
                        break;
                    }
                    m
                }
                None => prev.0 + dir * step,
            };
            step *= cfg.bracket_growth;
            match self.slope(trial)? {
                Slope::Finite(g) if g == 0.0 || crossed(g) => return Ok((prev, (trial, g))),
                Slope::Finite(g) => prev = (trial, g),
                Slope::Outside(_) => wall = Some(trial),
            }
        }
        Err(self.infeasible(from.0, wall.unwrap_or(prev.0)))
    }
}

/// Minimizes `G` by bisection on its increasing gradient, then evaluates
/// the primal objective at the tilt induced by the minimizer.
pub fn solve_dual(
    gen: &FGenerator,
    mu: &SupportedMeasure,
    field: &RiskField,
    lambda: f64,
    cfg: &SolveConfig,
) -> Result<DualReport> {
    cfg.validate()?;
    check_lambda(lambda)?;
    field.check_aligned(mu.len())?;
    if !field.separable() {
        return Err(FdrError::DegenerateInstance);
    }
    let dual = Dual { gen, mu, field, lambda };
    // the minimizer for constant risk E_Q[L]
    let start = -lambda * gen.df(1.0) - expected_risk(mu, field)?;
    let (b0, g0) = dual.feasible_start(start, cfg)?;

    let (mut lo, mut hi, mut beta, mut grad) = if g0 == 0.0 {
        (b0, b0, b0, 0.0)
    } else if g0 < 0.0 {
        let (before, after) = dual.walk((b0, g0), 1.0, cfg)?;
        (before.0, after.0, after.0, after.1)
    } else {
        let (before, after) = dual.walk((b0, g0), -1.0, cfg)?;
        (after.0, before.0, after.0, after.1)
    };

    let mut iterations = 0;
    while grad.abs() > cfg.epsilon {
        if iterations >= cfg.max_iters {
            return Err(FdrError::NoConvergence {
                iterations,
                bracket: (lo, hi),
                residual: grad,
            });
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Err(FdrError::NoConvergence {
                iterations,
                bracket: (lo, hi),
                residual: grad,
            });
        }
        let g = dual_gradient(gen, mu, field, lambda, mid)?;
        iterations += 1;
        beta = mid;
        grad = g;
        if g < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    // Newton on G' inside the bracket
    for _ in 0..4 {
        if grad == 0.0 {
            break;
        }
        let curv = match dual_curvature(gen, mu, field, lambda, beta) {
            Ok(c) if c > 0.0 => c,
            _ => break,
        };
        let cand = beta - grad / curv;
        // the sign change only pins the root up to rounding
        let slack = 8.0 * f64::EPSILON * lo.abs().max(hi.abs()).max(1.0);
        if !(cand >= lo - slack && cand <= hi + slack) {
            break;
        }
        match dual_gradient(gen, mu, field, lambda, cand) {
            Ok(g) if g.abs() < grad.abs() => {
                beta = cand;
                grad = g;
            }
            _ => break,
        }
    }

    let tilted = tilt_measure(gen, mu, field, lambda, beta).map_err(|e| match e {
        // the dual optimum leaves the primal feasible set: λ ∉ A
        FdrError::InfeasibleBeta { .. } => FdrError::InfeasibleLambda {
            lambda,
            bracket: (lo, hi),
        },
        other => other,
    })?;
    let primal = primal_value(gen, &tilted, field)?;
    let dual_value = dual_objective(gen, mu, field, lambda, beta)?;
    Ok(DualReport {
        beta_hat: beta,
        dual_value,
        primal_value: primal,
        gap: primal + dual_value,
        grad_norm_at_opt: grad.abs(),
        iterations,
    })
}

/// Both solves at one `λ` plus the agreement between them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    pub lambda: f64,
    pub primal: SolveReport,
    pub dual: DualReport,
    /// `|β̂ − N(λ)|`.
    pub beta_agreement: f64,
}

impl Certificate {
    /// Zero gap relative to the primal scale, and agreement of the two
    /// solutions within `2ε`.
    pub fn holds(&self, gap_tol: f64, epsilon: f64) -> bool {
        self.dual.gap.abs() <= gap_tol * (1.0 + self.dual.primal_value.abs()) && self.beta_agreement <= 2.0 * epsilon
    }
}

pub fn certify(
    gen: &FGenerator,
    mu: &SupportedMeasure,
    field: &RiskField,
    lambda: f64,
    cfg: &SolveConfig,
) -> Result<Certificate> {
    let primal = solve_normalization(gen, mu, field, lambda, cfg)?;
    let dual = solve_dual(gen, mu, field, lambda, cfg)?;
    let beta_agreement = (dual.beta_hat - primal.beta).abs();
    Ok(Certificate {
        lambda,
        primal,
        dual,
        beta_agreement,
    })
}
