//! Regularized empirical risk minimization over measures on a model class.
//!
//! The regularizer is an f-divergence to a reference measure `Q`. For a
//! risk field `L_z` and factor `λ > 0` the minimizer is a tilt of `Q`
//! whose normalizing constant is found by one-dimensional root finding
//! ([`normalize`]) or, equivalently, by maximizing a concave dual
//! ([`dual`]). [`continuation`] tracks the constant as `λ` varies.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod continuation;
pub mod dual;
pub mod error;
pub mod experiment;
pub mod generators;
pub mod measure;
pub mod normalize;
pub mod risk;
pub mod tilt;

pub use continuation::{integrate_path, OdePath, PathConfig, Stepper};
pub use dual::{certify, solve_dual, Certificate, DualReport};
pub use error::{FdrError, Result, Side};
pub use generators::{builtin_generator, ExtendedReal, FGenerator, Interval};
pub use measure::{discretize_density, GridSpec, Provenance, SupportedMeasure, Weighted};
pub use normalize::{estimate_lambda_star, solve_normalization, SolveConfig, SolveReport};
pub use risk::{Dataset, Loss, ModelRule, RiskField};
pub use tilt::{f_divergence, primal_value, tilt_measure, TiltedSolution};
