//! The regularized minimizer as a tilt of the reference measure.
//!
//! For a normalizing constant `β`, the minimizer of
//! `R_z(P) + λ·D_f(P‖Q)` has density
//! `dP/dQ(θ) = ḟ⁻¹(−(β + L_z(θ))/λ)` with respect to `Q`.

use serde::Serialize;

use crate::error::{FdrError, Result, Side};
use crate::generators::FGenerator;
use crate::measure::{pairwise_sum, weighted_sum, SupportedMeasure, Weighted};
use crate::risk::{expected_risk, RiskField};

/// Tilted measure at a given `(λ, β)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltedSolution {
    base: SupportedMeasure,
    rn_values: Vec<f64>,
    lambda: f64,
    beta: f64,
    tilted_weights: Vec<f64>,
}

impl TiltedSolution {
    pub fn base(&self) -> &SupportedMeasure {
        &self.base
    }

    /// `dP/dQ` at every support point.
    pub fn rn_values(&self) -> &[f64] {
        &self.rn_values
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn tilted_weights(&self) -> &[f64] {
        &self.tilted_weights
    }

    /// `Σᵢ P({θᵢ})`; one when `β` normalizes.
    pub fn total_mass(&self) -> f64 {
        pairwise_sum(&self.tilted_weights)
    }

    pub fn to_record(&self) -> TiltedRecord<'_> {
        TiltedRecord {
            lambda: self.lambda,
            beta: self.beta,
            points: self.base.points(),
            rn_values: &self.rn_values,
            tilted_weights: &self.tilted_weights,
        }
    }
}

impl Weighted for TiltedSolution {
    fn weights(&self) -> &[f64] {
        &self.tilted_weights
    }
}

/// JSON shape of a [`TiltedSolution`].
#[derive(Debug, Serialize)]
pub struct TiltedRecord<'a> {
    pub lambda: f64,
    pub beta: f64,
    pub points: &'a [Vec<f64>],
    pub rn_values: &'a [f64],
    pub tilted_weights: &'a [f64],
}

/// Argument `t = −(β + L)/λ` fed to `ḟ⁻¹` and `f*`.
#[inline]
pub(crate) fn tilt_argument(lambda: f64, beta: f64, risk: f64) -> f64 {
    -(beta + risk) / lambda
}

/// `ḟ⁻¹(t)` at support point `i`, with infeasibility reported against `β`.
pub(crate) fn density_at(
    gen: &FGenerator,
    mu: &SupportedMeasure,
    i: usize,
    lambda: f64,
    beta: f64,
    risk: f64,
) -> Result<f64> {
    let t = tilt_argument(lambda, beta, risk);
    let infeasible = |side| FdrError::InfeasibleBeta {
        beta,
        index: i,
        theta: mu.points()[i].clone(),
        t,
        side,
    };
    match gen.df_inv(t) {
        Ok(x) if x > 0.0 && !x.is_nan() => Ok(x),
        // in-domain zero is underflow of a positive density
        Ok(x) if x == 0.0 => Ok(x),
        // positivity failures mean t sits too low on ḟ's range
        Ok(_) => Err(infeasible(Side::Below)),
        Err(FdrError::Domain { side, .. }) => Err(infeasible(side)),
        Err(e) => Err(e),
    }
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(FdrError::Config(format!(
            "regularization factor must be positive and finite, got {lambda}"
        )))
    }
}

/// Builds the tilted measure at `(λ, β)`. No renormalization is applied.
pub fn tilt_measure(
    gen: &FGenerator,
    mu: &SupportedMeasure,
    field: &RiskField,
    lambda: f64,
    beta: f64,
) -> Result<TiltedSolution> {
    check_lambda(lambda)?;
    field.check_aligned(mu.len())?;
    let rn_values = field
        .values()
        .iter()
        .enumerate()
        .map(|(i, l)| density_at(gen, mu, i, lambda, beta, *l))
        .collect::<Result<Vec<f64>>>()?;
    let tilted_weights = mu.weights().iter().zip(&rn_values).map(|(q, r)| q * r).collect();
    Ok(TiltedSolution {
        base: mu.clone(),
        rn_values,
        lambda,
        beta,
        tilted_weights,
    })
}

/// `D_f(P‖Q) = Σᵢ Q({θᵢ})·f(dP/dQ(θᵢ))`.
pub fn f_divergence(gen: &FGenerator, tilted: &TiltedSolution) -> Result<f64> {
    let values: Vec<f64> = tilted.rn_values.iter().map(|r| gen.f(*r)).collect();
    weighted_sum(tilted.base.weights(), &values)
}

/// Primal objective `R_z(P) + λ·D_f(P‖Q)`.
pub fn primal_value(gen: &FGenerator, tilted: &TiltedSolution, field: &RiskField) -> Result<f64> {
    let risk = expected_risk(tilted, field)?;
    Ok(risk + tilted.lambda * f_divergence(gen, tilted)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_atoms() -> (SupportedMeasure, RiskField) {
        (
            SupportedMeasure::uniform_scalar(&[0.0, 1.0]).unwrap(),
            RiskField::from_values(vec![0.0, 1.0]).unwrap(),
        )
    }

    // softmax oracle: p ∝ q·e^{−L/λ}, β = λ·ln E_Q[e^{−L/λ}] − λ
    fn kl_oracle(lambda: f64) -> (f64, [f64; 2]) {
        let z = 0.5 * (1.0 + (-1.0 / lambda).exp());
        let beta = lambda * z.ln() - lambda;
        let p1 = 0.5 / z;
        (beta, [p1, 1.0 - p1])
    }

    #[test]
    fn kl_example_matches_softmax() {
        let (mu, field) = two_atoms();
        let (beta, p) = kl_oracle(1.0);
        assert!((beta + 1.379885).abs() < 1e-6);
        let sol = tilt_measure(&FGenerator::kl(), &mu, &field, 1.0, beta).unwrap();
        assert!((sol.rn_values()[0] - 1.462117).abs() < 1e-5);
        assert!((sol.rn_values()[1] - 0.537883).abs() < 1e-5);
        assert!((sol.tilted_weights()[0] - p[0]).abs() < 1e-12);
        assert!((sol.tilted_weights()[1] - 0.268941).abs() < 1e-5);

        // direct-sum oracle Σ p ln(p/q)
        let d_oracle: f64 = p.iter().map(|pi| pi * (pi / 0.5).ln()).sum();
        let d = f_divergence(&FGenerator::kl(), &sol).unwrap();
        assert!((d - d_oracle).abs() < 1e-12);
        assert!((d - 0.110942).abs() < 1e-5);
        let primal = primal_value(&FGenerator::kl(), &sol, &field).unwrap();
        assert!((primal - 0.379885).abs() < 1e-5);
    }

    #[test]
    fn chi_square_example() {
        let (mu, field) = two_atoms();
        let gen = FGenerator::chi_square();
        let sol = tilt_measure(&gen, &mu, &field, 1.0, -0.5).unwrap();
        assert_eq!(sol.rn_values(), &[1.25, 0.75]);
        assert!((f_divergence(&gen, &sol).unwrap() - 0.0625).abs() < 1e-12);
        assert!((primal_value(&gen, &sol, &field).unwrap() - 0.4375).abs() < 1e-10);
    }

    #[test]
    fn constant_risk_leaves_the_reference_untouched() {
        let mu = SupportedMeasure::uniform_scalar(&[0.0, 1.0, 2.0]).unwrap();
        let c = 0.7;
        let field = RiskField::from_values(vec![c; 3]).unwrap();
        for gen in [
            FGenerator::kl(),
            FGenerator::reverse_kl(),
            FGenerator::chi_square(),
            FGenerator::squared_hellinger(),
        ] {
            let lambda = 2.0;
            let beta = -lambda * gen.df(1.0) - c;
            let sol = tilt_measure(&gen, &mu, &field, lambda, beta).unwrap();
            for r in sol.rn_values() {
                assert!((r - 1.0).abs() < 1e-15, "{}", gen.name());
            }
            assert!(f_divergence(&gen, &sol).unwrap().abs() < 1e-15);
            let primal = primal_value(&gen, &sol, &field).unwrap();
            assert!((primal - c).abs() < 1e-14);
        }
    }

    #[test]
    fn infeasible_beta_names_the_point() {
        let (mu, field) = two_atoms();
        // χ²: at L = 1, t = −(−0.5 + 1)/0.2 = −2.5 < −2
        match tilt_measure(&FGenerator::chi_square(), &mu, &field, 0.2, -0.5) {
            Err(FdrError::InfeasibleBeta {
                index, theta, t, side, ..
            }) => {
                assert_eq!(index, 1);
                assert_eq!(theta, vec![1.0]);
                assert!((t + 2.5).abs() < 1e-12);
                assert_eq!(side, Side::Below);
            }
            other => panic!("{other:?}"),
        }
        // reverse KL needs β + L > 0
        assert!(matches!(
            tilt_measure(&FGenerator::reverse_kl(), &mu, &field, 1.0, -0.5),
            Err(FdrError::InfeasibleBeta {
                side: Side::Above,
                index: 0,
                ..
            })
        ));
    }

    #[test]
    fn lambda_must_be_positive() {
        let (mu, field) = two_atoms();
        assert!(tilt_measure(&FGenerator::kl(), &mu, &field, 0.0, 0.0).is_err());
        assert!(tilt_measure(&FGenerator::kl(), &mu, &field, f64::NAN, 0.0).is_err());
    }

    #[test]
    fn record_serializes() {
        let (mu, field) = two_atoms();
        let sol = tilt_measure(&FGenerator::chi_square(), &mu, &field, 1.0, -0.5).unwrap();
        let json = serde_json::to_value(sol.to_record()).unwrap();
        assert_eq!(json["rn_values"][0], 1.25);
        assert_eq!(json["points"][1][0], 1.0);
        assert_eq!(json["lambda"], 1.0);
    }
}
