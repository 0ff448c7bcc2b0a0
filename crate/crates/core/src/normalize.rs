//! The normalization function `N(λ)`.
//!
//! `N(λ)` is the unique `β` with
//! `F(λ, β) = ∫ ḟ⁻¹(−(β + L_z(θ))/λ) dQ(θ) − 1 = 0`.
//! `F` is strictly decreasing in `β` wherever it is defined, and the set of
//! admissible `β` is an interval, so the root is found by bisection after
//! a bracket has been established.
//!
//! Bracketing starts from `β = λ` and `β = δ* − λ·ḟ(0)` (or
//! `−δ* − λ·ḟ(1) − 1` when `ḟ(0) = −∞`), orders the two by value, and then
//! expands geometrically. A trial `β` outside the admissible interval is
//! classified by the side it fell on, and later trials bisect towards the
//! admissible side instead of stepping further.

use serde::{Deserialize, Serialize};

use crate::error::{FdrError, Result, Side};
use crate::generators::{ExtendedReal, FGenerator};
use crate::measure::SupportedMeasure;
use crate::risk::RiskField;
use crate::tilt::{check_lambda, density_at, tilt_measure};

const POLISH_STEPS: usize = 4;

/// Tolerances and budgets of the normalization solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveConfig {
    /// Tolerance on `|∫ḟ⁻¹ dQ − 1|`.
    pub epsilon: f64,
    pub max_iters: usize,
    pub bracket_growth: f64,
    pub max_bracket_expansions: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            epsilon: 1e-10,
            max_iters: 200,
            bracket_growth: 2.0,
            max_bracket_expansions: 120,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(FdrError::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.max_iters == 0 {
            return Err(FdrError::Config("max_iters must be at least 1".into()));
        }
        if !(self.bracket_growth > 1.0) || !self.bracket_growth.is_finite() {
            return Err(FdrError::Config(format!(
                "bracket_growth must exceed 1, got {}",
                self.bracket_growth
            )));
        }
        if self.max_bracket_expansions == 0 {
            return Err(FdrError::Config("max_bracket_expansions must be at least 1".into()));
        }
        Ok(())
    }
}

/// Outcome of [`solve_normalization`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    /// `N(λ)`.
    pub beta: f64,
    /// `F(λ, β)` at the returned `β`.
    pub residual: f64,
    /// Bisection steps taken.
    pub iterations: usize,
    /// Final bracket `(b_lo, b_hi)` with `F(b_lo) > 0 > F(b_hi)`.
    pub bracket: (f64, f64),
    pub feasible: bool,
    pub failure_reason: Option<String>,
}

impl SolveReport {
    /// Report for a failed solve, as recorded by batch sweeps.
    pub fn failed(err: &FdrError) -> Self {
        let bracket = match err {
            FdrError::InfeasibleLambda { bracket, .. } | FdrError::NoConvergence { bracket, .. } => *bracket,
            _ => (f64::NAN, f64::NAN),
        };
        let iterations = match err {
            FdrError::NoConvergence { iterations, .. } => *iterations,
            _ => 0,
        };
        SolveReport {
            beta: f64::NAN,
            residual: f64::NAN,
            iterations,
            bracket,
            feasible: false,
            failure_reason: Some(err.kind().to_string()),
        }
    }
}

/// `F(a, b) = ∫ ḟ⁻¹(−(b + L)/a) dQ − 1`.
pub fn residual_f(gen: &FGenerator, mu: &SupportedMeasure, field: &RiskField, a: f64, b: f64) -> Result<f64> {
    check_lambda(a)?;
    field.check_aligned(mu.len())?;
    let values = field.values();
    let integral = mu.expectation_indexed(|i| density_at(gen, mu, i, a, b, values[i]))?;
    Ok(integral - 1.0)
}

/// Partial derivatives `(∂F/∂a, ∂F/∂b)`:
///
/// ```text
/// ∂F/∂a = ∫ (b + L)/a² · 1/f̈(ḟ⁻¹(t)) dQ
/// ∂F/∂b = −(1/a) ∫ 1/f̈(ḟ⁻¹(t)) dQ
/// ```
pub fn residual_partials(
    gen: &FGenerator,
    mu: &SupportedMeasure,
    field: &RiskField,
    a: f64,
    b: f64,
) -> Result<(f64, f64)> {
    check_lambda(a)?;
    field.check_aligned(mu.len())?;
    let values = field.values();
    let inv_curv = |i: usize| -> Result<f64> {
        let x = density_at(gen, mu, i, a, b, values[i])?;
        let c = gen.d2f(x);
        if !(c > 0.0) || !c.is_finite() {
            return Err(FdrError::GeneratorContract(format!(
                "{}: second derivative {c} at x = {x}",
                gen.name()
            )));
        }
        Ok(1.0 / c)
    };
    let d_a = mu.expectation_indexed(|i| Ok((b + values[i]) / (a * a) * inv_curv(i)?))?;
    let d_b = -mu.expectation_indexed(inv_curv)? / a;
    Ok((d_a, d_b))
}

/// `true` iff `ḟ⁻¹(−(β + L)/λ)` exists and is positive at every support
/// point.
pub fn check_feasibility(gen: &FGenerator, mu: &SupportedMeasure, field: &RiskField, lambda: f64, beta: f64) -> bool {
    tilt_measure(gen, mu, field, lambda, beta).is_ok()
}

#[derive(Debug, Clone, Copy)]
enum Probe {
    Value(f64),
    /// β lies below the admissible interval.
    TooLow,
    /// β lies above the admissible interval.
    TooHigh,
}

#[derive(Debug, Default)]
struct Bracket {
    /// Largest β seen with F > 0.
    pos: Option<(f64, f64)>,
    /// Smallest β seen with F < 0.
    neg: Option<(f64, f64)>,
    too_low: Option<f64>,
    too_high: Option<f64>,
    root: Option<f64>,
}

impl Bracket {
    fn record(&mut self, b: f64, probe: Probe) {
        match probe {
            Probe::Value(v) if v > 0.0 => {
                if self.pos.is_none_or(|(p, _)| b > p) {
                    self.pos = Some((b, v));
                }
            }
            Probe::Value(v) if v < 0.0 => {
                if self.neg.is_none_or(|(n, _)| b < n) {
                    self.neg = Some((b, v));
                }
            }
            Probe::Value(_) => self.root = Some(b),
            Probe::TooLow => self.too_low = Some(self.too_low.map_or(b, |l| l.max(b))),
            Probe::TooHigh => self.too_high = Some(self.too_high.map_or(b, |h| h.min(b))),
        }
    }

    fn span(&self) -> (f64, f64) {
        let lo = self.pos.map(|p| p.0).or(self.too_low).unwrap_or(f64::NAN);
        let hi = self.neg.map(|n| n.0).or(self.too_high).unwrap_or(f64::NAN);
        (lo, hi)
    }
}

fn midpoint(a: f64, b: f64) -> Option<f64> {
    let m = 0.5 * (a + b);
    (m > a.min(b) && m < a.max(b)).then_some(m)
}

struct Problem<'a> {
    gen: &'a FGenerator,
    mu: &'a SupportedMeasure,
    field: &'a RiskField,
    lambda: f64,
}

impl Problem<'_> {
    fn residual(&self, b: f64) -> Result<f64> {
        residual_f(self.gen, self.mu, self.field, self.lambda, b)
    }

    fn probe(&self, b: f64) -> Result<Probe> {
        match self.residual(b) {
            Ok(v) if v.is_nan() => Err(FdrError::GeneratorContract(format!(
                "{}: residual is NaN at beta = {b}",
                self.gen.name()
            ))),
            Ok(v) => Ok(Probe::Value(v)),
            // t below ḟ's range means β is too large, and vice versa
            Err(FdrError::InfeasibleBeta { side: Side::Below, .. }) => Ok(Probe::TooHigh),
            Err(FdrError::InfeasibleBeta { side: Side::Above, .. }) => Ok(Probe::TooLow),
            Err(e) => Err(e),
        }
    }

    fn initial_candidates(&self) -> (f64, f64) {
        let delta_star = self.field.delta_star();
        let lambda = self.lambda;
        let other = match self.gen.df_at_zero() {
            ExtendedReal::Finite(d0) => delta_star - lambda * d0,
            _ => -delta_star - lambda * self.gen.df(1.0) - 1.0,
        };
        (lambda.min(other), lambda.max(other))
    }

    fn establish_bracket(&self, cfg: &SolveConfig) -> Result<Bracket> {
        let infeasible = |br: &Bracket| FdrError::InfeasibleLambda {
            lambda: self.lambda,
            bracket: br.span(),
        };
        let mut br = Bracket::default();
        let (c_lo, c_hi) = self.initial_candidates();
        br.record(c_lo, self.probe(c_lo)?);
        br.record(c_hi, self.probe(c_hi)?);
        let mut up = self.lambda.max(1.0);
        let mut down = up;
        for _ in 0..cfg.max_bracket_expansions {
            if br.root.is_some() || (br.pos.is_some() && br.neg.is_some()) {
                return Ok(br);
            }
            let next = match (br.pos, br.neg) {
                (Some((p, _)), None) => match br.too_high {
                    Some(h) => midpoint(p, h),
                    None => {
                        let b = p + up;
                        up *= cfg.bracket_growth;
                        Some(b)
                    }
                },
                (None, Some((n, _))) => match br.too_low {
                    Some(l) => midpoint(l, n),
                    None => {
                        let b = n - down;
                        down *= cfg.bracket_growth;
                        Some(b)
                    }
                },
                _ => match (br.too_low, br.too_high) {
                    (Some(l), Some(h)) => midpoint(l, h),
                    (Some(l), None) => {
                        let b = l + up;
                        up *= cfg.bracket_growth;
                        Some(b)
                    }
                    (None, Some(h)) => {
                        let b = h - down;
                        down *= cfg.bracket_growth;
                        Some(b)
                    }
                    (None, None) => unreachable!("every probe is recorded"),
                },
            };
            // a collapsed interval means F keeps one sign up to the
            // boundary of the admissible set
            let Some(b) = next.filter(|b| b.is_finite()) else {
                return Err(infeasible(&br));
            };
            br.record(b, self.probe(b)?);
        }
        if br.root.is_some() || (br.pos.is_some() && br.neg.is_some()) {
            Ok(br)
        } else {
            Err(infeasible(&br))
        }
    }

    /// Newton steps on `F(λ, ·)`, kept only while they stay inside the
    /// bracket and shrink the residual.
    fn polish(&self, mut beta: f64, mut value: f64, lo: f64, hi: f64) -> (f64, f64) {
        for _ in 0..POLISH_STEPS {
            if value == 0.0 {
                break;
            }
            let Ok((_, slope)) = residual_partials(self.gen, self.mu, self.field, self.lambda, beta) else {
                break;
            };
            if !(slope < 0.0) {
                break;
            }
            let cand = beta - value / slope;
            // the sign change only pins the root up to rounding
            let slack = 8.0 * f64::EPSILON * lo.abs().max(hi.abs()).max(1.0);
            if !(cand >= lo - slack && cand <= hi + slack) {
                break;
            }
            match self.residual(cand) {
                Ok(v) if v.abs() < value.abs() => {
                    beta = cand;
                    value = v;
                }
                _ => break,
            }
        }
        (beta, value)
    }
}

/// Computes `N(λ)` by bracketed bisection on `F(λ, ·)`, finished with a
/// Newton polish once the residual is within `epsilon`.
pub fn solve_normalization(
    gen: &FGenerator,
    mu: &SupportedMeasure,
    field: &RiskField,
    lambda: f64,
    cfg: &SolveConfig,
) -> Result<SolveReport> {
    cfg.validate()?;
    check_lambda(lambda)?;
    field.check_aligned(mu.len())?;
    if !field.separable() {
        return Err(FdrError::DegenerateInstance);
    }
    let problem = Problem { gen, mu, field, lambda };
    let br = problem.establish_bracket(cfg)?;
    if let Some(root) = br.root {
        return Ok(SolveReport {
            beta: root,
            residual: 0.0,
            iterations: 0,
            bracket: (root, root),
            feasible: true,
            failure_reason: None,
        });
    }
    let (mut lo, f_lo) = br.pos.expect("bracket has a positive end");
    let (mut hi, f_hi) = br.neg.expect("bracket has a negative end");
    if !(lo < hi) {
        return Err(FdrError::GeneratorContract(format!(
            "{}: residual is not decreasing in beta (F({lo}) = {f_lo}, F({hi}) = {f_hi})",
            gen.name()
        )));
    }

    let mut best = if f_lo.abs() < f_hi.abs() { f_lo } else { f_hi };
    let mut iterations = 0;
    let (beta, value) = loop {
        let no_convergence = |iterations, lo, hi| FdrError::NoConvergence {
            iterations,
            bracket: (lo, hi),
            residual: best,
        };
        if iterations >= cfg.max_iters {
            return Err(no_convergence(iterations, lo, hi));
        }
        let Some(mid) = midpoint(lo, hi) else {
            return Err(no_convergence(iterations, lo, hi));
        };
        let v = problem.residual(mid)?;
        iterations += 1;
        if v.abs() < best.abs() {
            best = v;
        }
        if v.abs() <= cfg.epsilon {
            break (mid, v);
        }
        if v > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    };
    let (beta, residual) = problem.polish(beta, value, lo, hi);
    Ok(SolveReport {
        beta,
        residual,
        iterations,
        bracket: (lo, hi),
        feasible: true,
        failure_reason: None,
    })
}

/// Estimate of `λ* = inf A`, the left end of the feasible interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LambdaStarEstimate {
    pub value: f64,
    /// The solve already succeeds at the lower probe, so `λ* ≤ value`.
    pub at_or_below_lower: bool,
}

const LAMBDA_STAR_RESOLUTION: f64 = 1e-6;

fn solve_succeeds(
    gen: &FGenerator,
    mu: &SupportedMeasure,
    field: &RiskField,
    lambda: f64,
    cfg: &SolveConfig,
) -> Result<bool> {
    match solve_normalization(gen, mu, field, lambda, cfg) {
        Ok(_) => Ok(true),
        Err(FdrError::InfeasibleLambda { .. } | FdrError::NoConvergence { .. }) => Ok(false),
        Err(e) => Err(e),
    }
}

/// Locates `λ*` by geometric bisection on solver success over
/// `[lo, hi]`, relying on the feasible set being an interval unbounded
/// above.
pub fn estimate_lambda_star(
    gen: &FGenerator,
    mu: &SupportedMeasure,
    field: &RiskField,
    probe_range: (f64, f64),
    cfg: &SolveConfig,
) -> Result<LambdaStarEstimate> {
    if !field.separable() {
        return Err(FdrError::DegenerateInstance);
    }
    let (mut lo, mut hi) = probe_range;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(FdrError::Config(format!(
            "probe range must satisfy 0 < lo < hi, got ({lo}, {hi})"
        )));
    }
    if !solve_succeeds(gen, mu, field, hi, cfg)? {
        return Err(FdrError::LambdaStarNotReached { hi });
    }
    if solve_succeeds(gen, mu, field, lo, cfg)? {
        return Ok(LambdaStarEstimate {
            value: lo,
            at_or_below_lower: true,
        });
    }
    while hi / lo > 1.0 + LAMBDA_STAR_RESOLUTION {
        let mid = (lo * hi).sqrt();
        if solve_succeeds(gen, mu, field, mid, cfg)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(LambdaStarEstimate {
        value: (lo * hi).sqrt(),
        at_or_below_lower: false,
    })
}
