//! Convex generators of f-divergences.
//!
//! An [`FGenerator`] bundles a strictly convex `f` with `f(1) = 0` together
//! with everything the solvers need: the derivative `ḟ`, its inverse `ḟ⁻¹`,
//! the second derivative `f̈`, and the Legendre-Fenchel conjugate
//! `f*(t) = sup_{x ≥ 0} { t·x − f(x) }`.
//!
//! | name                | f(x)          | ḟ⁻¹(t)        | f*(t)                      | ḟ(0) |
//! |---------------------|---------------|---------------|----------------------------|------|
//! | `kl`                | x ln x        | e^{t−1}       | e^{t−1}                    | −∞   |
//! | `reverse_kl`        | −ln x         | −1/t, t < 0   | −1 − ln(−t), t < 0         | −∞   |
//! | `chi_square`        | (x − 1)²      | 1 + t/2       | t + t²/4 (t ≥ −2), else −1 | −2   |
//! | `squared_hellinger` | (1 − √x)²     | (1 − t)⁻²     | t/(1 − t), t < 1           | −∞   |
//!
//! `ḟ⁻¹` is defined on the open range of `ḟ`, i.e. between `ḟ(0)` and
//! `ḟ(∞)`, where it is strictly positive. Arguments outside that range are
//! reported as domain errors instead of being clipped.

use std::fmt;
use std::ops::Bound;

use serde::Serialize;

use crate::error::{FdrError, Result, Side};

/// Real number extended with the two infinities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtendedReal {
    NegInfinity,
    Finite(f64),
    PosInfinity,
}

impl ExtendedReal {
    pub fn finite(self) -> Option<f64> {
        match self {
            ExtendedReal::Finite(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, ExtendedReal::Finite(_))
    }
}

impl fmt::Display for ExtendedReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtendedReal::NegInfinity => write!(f, "-inf"),
            ExtendedReal::Finite(v) => write!(f, "{v}"),
            ExtendedReal::PosInfinity => write!(f, "+inf"),
        }
    }
}

/// A real interval with arbitrary (open, closed or missing) endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lower: Bound<f64>,
    pub upper: Bound<f64>,
}

impl Interval {
    pub const REALS: Interval = Interval {
        lower: Bound::Unbounded,
        upper: Bound::Unbounded,
    };

    pub fn open(lower: ExtendedReal, upper: ExtendedReal) -> Self {
        let bound = |e: ExtendedReal| match e {
            ExtendedReal::Finite(v) => Bound::Excluded(v),
            _ => Bound::Unbounded,
        };
        Interval {
            lower: bound(lower),
            upper: bound(upper),
        }
    }

    /// `None` when `t` lies inside, otherwise the side it falls on.
    pub fn locate(&self, t: f64) -> Option<Side> {
        if t.is_nan() {
            return Some(Side::Below);
        }
        let below = match self.lower {
            Bound::Included(a) => t < a,
            Bound::Excluded(a) => t <= a,
            Bound::Unbounded => false,
        };
        if below {
            return Some(Side::Below);
        }
        let above = match self.upper {
            Bound::Included(b) => t > b,
            Bound::Excluded(b) => t >= b,
            Bound::Unbounded => false,
        };
        above.then_some(Side::Above)
    }

    pub fn contains(&self, t: f64) -> bool {
        self.locate(t).is_none()
    }
}

/// Raw closed-form maps used to build an [`FGenerator`].
///
/// `inverse_derivative` only needs to be correct on the open range of `ḟ`,
/// and `conjugate` only on `conjugate_domain`; the bundle performs the
/// domain checks.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorParts {
    pub name: &'static str,
    pub value: fn(f64) -> f64,
    pub derivative: fn(f64) -> f64,
    pub inverse_derivative: fn(f64) -> f64,
    pub second_derivative: fn(f64) -> f64,
    pub conjugate: fn(f64) -> f64,
    pub df_at_zero: ExtendedReal,
    pub df_at_infinity: ExtendedReal,
    pub conjugate_domain: Interval,
}

/// Generator of an f-divergence with its derivative bundle.
///
/// Immutable, `Copy`, and safe to share between threads.
#[derive(Debug, Clone, Copy)]
pub struct FGenerator {
    parts: GeneratorParts,
}

impl FGenerator {
    /// Builds a generator from user-supplied closed forms after checking
    /// `f(1) = 0`.
    pub fn custom(parts: GeneratorParts) -> Result<Self> {
        let at_one = (parts.value)(1.0);
        if at_one != 0.0 {
            return Err(FdrError::GeneratorContract(format!(
                "{}: f(1) = {at_one}, expected 0",
                parts.name
            )));
        }
        Ok(FGenerator { parts })
    }

    pub fn kl() -> Self {
        FGenerator {
            parts: GeneratorParts {
                name: "kl",
                value: |x| if x == 0.0 { 0.0 } else { x * x.ln() },
                derivative: |x| x.ln() + 1.0,
                inverse_derivative: |t| (t - 1.0).exp(),
                second_derivative: |x| 1.0 / x,
                conjugate: |t| (t - 1.0).exp(),
                df_at_zero: ExtendedReal::NegInfinity,
                df_at_infinity: ExtendedReal::PosInfinity,
                conjugate_domain: Interval::REALS,
            },
        }
    }

    pub fn reverse_kl() -> Self {
        FGenerator {
            parts: GeneratorParts {
                name: "reverse_kl",
                value: |x| -x.ln(),
                derivative: |x| -1.0 / x,
                inverse_derivative: |t| -1.0 / t,
                second_derivative: |x| 1.0 / (x * x),
                conjugate: |t| -1.0 - (-t).ln(),
                df_at_zero: ExtendedReal::NegInfinity,
                df_at_infinity: ExtendedReal::Finite(0.0),
                conjugate_domain: Interval {
                    lower: Bound::Unbounded,
                    upper: Bound::Excluded(0.0),
                },
            },
        }
    }

    pub fn chi_square() -> Self {
        FGenerator {
            parts: GeneratorParts {
                name: "chi_square",
                value: |x| (x - 1.0) * (x - 1.0),
                derivative: |x| 2.0 * (x - 1.0),
                inverse_derivative: |t| 1.0 + 0.5 * t,
                second_derivative: |_| 2.0,
                // Below the kink at t = ḟ(0) = −2 the supremum sits at x = 0.
                conjugate: |t| if t >= -2.0 { t + 0.25 * t * t } else { -1.0 },
                df_at_zero: ExtendedReal::Finite(-2.0),
                df_at_infinity: ExtendedReal::PosInfinity,
                conjugate_domain: Interval::REALS,
            },
        }
    }

    pub fn squared_hellinger() -> Self {
        FGenerator {
            parts: GeneratorParts {
                name: "squared_hellinger",
                value: |x| {
                    let s = 1.0 - x.sqrt();
                    s * s
                },
                derivative: |x| 1.0 - 1.0 / x.sqrt(),
                inverse_derivative: |t| {
                    let s = 1.0 - t;
                    1.0 / (s * s)
                },
                second_derivative: |x| 0.5 / (x * x.sqrt()),
                conjugate: |t| t / (1.0 - t),
                df_at_zero: ExtendedReal::NegInfinity,
                df_at_infinity: ExtendedReal::Finite(1.0),
                conjugate_domain: Interval {
                    lower: Bound::Unbounded,
                    upper: Bound::Excluded(1.0),
                },
            },
        }
    }

    pub fn name(&self) -> &'static str {
        self.parts.name
    }

    /// `f(x)` for `x ≥ 0`; `f(0)` may be `+∞` (reverse KL).
    pub fn f(&self, x: f64) -> f64 {
        (self.parts.value)(x)
    }

    pub fn df(&self, x: f64) -> f64 {
        (self.parts.derivative)(x)
    }

    pub fn d2f(&self, x: f64) -> f64 {
        (self.parts.second_derivative)(x)
    }

    /// `ḟ(0) = lim_{x→0⁺} ḟ(x)`.
    pub fn df_at_zero(&self) -> ExtendedReal {
        self.parts.df_at_zero
    }

    /// `lim_{x→∞} ḟ(x)`.
    pub fn df_at_infinity(&self) -> ExtendedReal {
        self.parts.df_at_infinity
    }

    /// Open range of `ḟ`, on which `ḟ⁻¹` is defined and positive.
    pub fn inverse_derivative_domain(&self) -> Interval {
        Interval::open(self.parts.df_at_zero, self.parts.df_at_infinity)
    }

    pub fn conjugate_domain(&self) -> Interval {
        self.parts.conjugate_domain
    }

    pub fn df_inv(&self, t: f64) -> Result<f64> {
        if let Some(side) = self.inverse_derivative_domain().locate(t) {
            return Err(FdrError::Domain {
                what: "inverse derivative",
                arg: t,
                side,
            });
        }
        Ok((self.parts.inverse_derivative)(t))
    }

    pub fn conjugate(&self, t: f64) -> Result<f64> {
        if let Some(side) = self.parts.conjugate_domain.locate(t) {
            return Err(FdrError::Domain {
                what: "conjugate",
                arg: t,
                side,
            });
        }
        Ok((self.parts.conjugate)(t))
    }

    /// Slope of the conjugate. Equals `ḟ⁻¹(t)` on the range of `ḟ`, and `0`
    /// on the flat part `t ≤ ḟ(0)` that exists when `ḟ(0)` is finite.
    pub fn conjugate_derivative(&self, t: f64) -> Result<f64> {
        match self.df_inv(t) {
            Ok(x) => Ok(x),
            Err(err) => match self.parts.df_at_zero {
                ExtendedReal::Finite(d0) if t <= d0 && self.conjugate_domain().contains(t) => Ok(0.0),
                _ => Err(err),
            },
        }
    }

    /// Curvature of the conjugate, `1 / f̈(ḟ⁻¹(t))`, zero on the flat part.
    pub fn conjugate_second_derivative(&self, t: f64) -> Result<f64> {
        let x = self.conjugate_derivative(t)?;
        if x == 0.0 {
            return Ok(0.0);
        }
        Ok(1.0 / self.d2f(x))
    }

    /// Evaluates `sup_x { t·x − f(x) }` by zooming grid search over `x ≥ 0`.
    ///
    /// Independent of the closed-form conjugate; used to check it.
    pub fn conjugate_by_search(&self, t: f64, grid: &SearchGrid) -> Result<f64> {
        let objective = |x: f64| {
            let v = t * x - self.f(x);
            if v.is_nan() {
                f64::NEG_INFINITY
            } else {
                v
            }
        };
        let nodes = grid.nodes.max(3);
        let mut upper = grid.upper;
        let mut widenings = 0;
        let (mut lo, mut hi) = loop {
            let (k, _) = scan(&objective, 0.0, upper, nodes);
            if k + 1 < nodes {
                let h = upper / (nodes - 1) as f64;
                let x = h * k as f64;
                break ((x - h).max(0.0), x + h);
            }
            if widenings == grid.max_widenings {
                return Err(FdrError::UnboundedConjugate { t, upper });
            }
            widenings += 1;
            upper *= grid.widen_factor;
        };
        let mut best = f64::NEG_INFINITY;
        for _ in 0..=grid.refinements {
            let (k, v) = scan(&objective, lo, hi, nodes);
            best = best.max(v);
            let h = (hi - lo) / (nodes - 1) as f64;
            let x = lo + h * k as f64;
            lo = (x - h).max(0.0);
            hi = x + h;
        }
        Ok(best)
    }
}

fn scan(objective: &impl Fn(f64) -> f64, lo: f64, hi: f64, nodes: usize) -> (usize, f64) {
    let h = (hi - lo) / (nodes - 1) as f64;
    let mut best = (0, f64::NEG_INFINITY);
    for k in 0..nodes {
        let v = objective(lo + h * k as f64);
        if v > best.1 {
            best = (k, v);
        }
    }
    best
}

/// Grid used by [`FGenerator::conjugate_by_search`].
#[derive(Debug, Clone, Copy)]
pub struct SearchGrid {
    /// Initial upper end of the search interval `[0, upper]`.
    pub upper: f64,
    pub nodes: usize,
    /// Number of zoom passes around the discrete argmax.
    pub refinements: usize,
    pub widen_factor: f64,
    pub max_widenings: usize,
}

impl Default for SearchGrid {
    fn default() -> Self {
        SearchGrid {
            upper: 100.0,
            nodes: 2001,
            refinements: 5,
            widen_factor: 10.0,
            max_widenings: 6,
        }
    }
}

/// Names accepted by [`builtin_generator`].
pub const BUILTIN_GENERATORS: [&str; 4] = ["kl", "reverse_kl", "chi_square", "squared_hellinger"];

pub fn builtin_generator(name: &str) -> Result<FGenerator> {
    match name.to_ascii_lowercase().replace('-', "_").as_str() {
        "kl" => Ok(FGenerator::kl()),
        "reverse_kl" => Ok(FGenerator::reverse_kl()),
        "chi_square" => Ok(FGenerator::chi_square()),
        "squared_hellinger" => Ok(FGenerator::squared_hellinger()),
        _ => Err(FdrError::Config(format!(
            "unknown generator '{name}' (expected one of {BUILTIN_GENERATORS:?})"
        ))),
    }
}
