//! Empirical risk of models on the support of a reference measure.

use serde::{Deserialize, Serialize};

use crate::error::{FdrError, Result};
use crate::measure::{weighted_sum, SupportedMeasure, Weighted};

/// Labeled patterns `((x₁, y₁), …, (xₙ, yₙ))`, `n ≥ 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dataset {
    pairs: Vec<(Vec<f64>, f64)>,
}

impl Dataset {
    pub fn new(pairs: Vec<(Vec<f64>, f64)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(FdrError::InvalidDataset(
                "dataset must contain at least one pair".into(),
            ));
        }
        for (x, y) in &pairs {
            if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
                return Err(FdrError::InvalidDataset(format!("non-finite pair ({x:?}, {y})")));
            }
        }
        Ok(Dataset { pairs })
    }

    /// Dataset with scalar patterns.
    pub fn scalar(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(pairs.iter().map(|(x, y)| (vec![*x], *y)).collect())
    }

    pub fn pairs(&self) -> &[(Vec<f64>, f64)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Loss functions `ℓ(ŷ, y) ≥ 0` with `ℓ(y, y) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Loss {
    Squared,
    Absolute,
    /// `1` when `y·ŷ < margin`, else `0`. Meant for ±1 labels.
    ZeroOneMargin {
        margin: f64,
    },
}

impl Loss {
    pub fn eval(&self, predicted: f64, label: f64) -> f64 {
        match *self {
            Loss::Squared => (predicted - label) * (predicted - label),
            Loss::Absolute => (predicted - label).abs(),
            Loss::ZeroOneMargin { margin } => {
                if label * predicted < margin {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Model evaluation rules `h(θ, x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRule {
    /// `θᵀx`; requires `dim θ = dim x`.
    Linear,
    /// `θᵀ(x, 1)`; requires `dim θ = dim x + 1`.
    Affine,
}

impl ModelRule {
    pub fn eval(&self, theta: &[f64], x: &[f64]) -> f64 {
        let dot: f64 = theta.iter().zip(x).map(|(a, b)| a * b).sum();
        match self {
            ModelRule::Linear => dot,
            ModelRule::Affine => dot + theta[x.len()],
        }
    }

    fn check_dims(&self, theta_dim: usize, x_dim: usize) -> Result<()> {
        let expected = match self {
            ModelRule::Linear => x_dim,
            ModelRule::Affine => x_dim + 1,
        };
        if theta_dim != expected {
            return Err(FdrError::Config(format!(
                "{self:?} model with {x_dim}-dimensional patterns needs {expected}-dimensional parameters, support has {theta_dim}"
            )));
        }
        Ok(())
    }
}

/// Empirical risk `L_z(θᵢ)` at each support point of a measure.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskField {
    values: Vec<f64>,
    delta_star: f64,
    separable: bool,
}

impl RiskField {
    /// Wraps precomputed nonnegative risk values.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(FdrError::EmptySupport);
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(FdrError::IntegrandDomain {
                theta: Vec::new(),
                value: *v,
            });
        }
        let delta_star = values.iter().copied().fold(f64::INFINITY, f64::min);
        let separable = values.iter().any(|v| *v != values[0]);
        if !separable {
            log::warn!("risk is constant on the support; solvers will refuse this instance");
        }
        Ok(RiskField {
            values,
            delta_star,
            separable,
        })
    }

    /// Risk values aligned with a given measure.
    pub fn aligned(values: Vec<f64>, mu: &SupportedMeasure) -> Result<Self> {
        if values.len() != mu.len() {
            return Err(FdrError::Alignment {
                expected: mu.len(),
                found: values.len(),
            });
        }
        Self::from_values(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Smallest risk on the support.
    pub fn delta_star(&self) -> f64 {
        self.delta_star
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `false` when the risk is constant on the support.
    pub fn separable(&self) -> bool {
        self.separable
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub(crate) fn check_aligned(&self, n: usize) -> Result<()> {
        if self.values.len() != n {
            return Err(FdrError::Alignment {
                expected: n,
                found: self.values.len(),
            });
        }
        Ok(())
    }
}

/// `L_z(θ) = (1/n) Σⱼ ℓ(h(θ, xⱼ), yⱼ)` at every support point of `mu`.
pub fn build_risk_field(
    data: &Dataset,
    model_rule: impl Fn(&[f64], &[f64]) -> f64,
    loss: impl Fn(f64, f64) -> f64,
    mu: &SupportedMeasure,
) -> Result<RiskField> {
    for (_, y) in data.pairs() {
        let self_loss = loss(*y, *y);
        if self_loss != 0.0 {
            return Err(FdrError::Config(format!(
                "loss must vanish on the diagonal, got l({y}, {y}) = {self_loss}"
            )));
        }
    }
    let n = data.len() as f64;
    let values = mu
        .points()
        .iter()
        .map(|theta| {
            let total: f64 = data.pairs().iter().map(|(x, y)| loss(model_rule(theta, x), *y)).sum();
            let value = total / n;
            if value.is_finite() && value >= 0.0 {
                Ok(value)
            } else {
                Err(FdrError::IntegrandDomain {
                    theta: theta.clone(),
                    value,
                })
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    RiskField::from_values(values)
}

/// [`build_risk_field`] with a built-in model rule and loss.
pub fn build_builtin_risk_field(
    data: &Dataset,
    model_rule: ModelRule,
    loss: Loss,
    mu: &SupportedMeasure,
) -> Result<RiskField> {
    let x_dim = data.pairs()[0].0.len();
    if data.pairs().iter().any(|(x, _)| x.len() != x_dim) {
        return Err(FdrError::InvalidDataset("patterns have mixed dimensions".into()));
    }
    model_rule.check_dims(mu.points()[0].len(), x_dim)?;
    build_risk_field(data, |t, x| model_rule.eval(t, x), |p, y| loss.eval(p, y), mu)
}

/// `R_z(P) = Σᵢ P({θᵢ})·L_z(θᵢ)`.
pub fn expected_risk(measure: &impl Weighted, field: &RiskField) -> Result<f64> {
    let w = measure.weights();
    field.check_aligned(w.len())?;
    weighted_sum(w, field.values())
}

/// Mass of the Rashomon set `{θ : L_z(θ) ≤ δ}`.
pub fn rashomon_mass(mu: &SupportedMeasure, field: &RiskField, delta: f64) -> Result<f64> {
    field.check_aligned(mu.len())?;
    let inside: Vec<f64> = field
        .values()
        .iter()
        .map(|v| if *v <= delta { 1.0 } else { 0.0 })
        .collect();
    weighted_sum(mu.weights(), &inside)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_atoms() -> SupportedMeasure {
        SupportedMeasure::uniform_scalar(&[0.0, 1.0]).unwrap()
    }

    #[test]
    fn linear_squared_example() {
        let data = Dataset::scalar(&[(1.0, 0.0)]).unwrap();
        let field = build_builtin_risk_field(&data, ModelRule::Linear, Loss::Squared, &two_atoms()).unwrap();
        assert_eq!(field.values(), &[0.0, 1.0]);
        assert_eq!(field.delta_star(), 0.0);
        assert!(field.separable());
    }

    #[test]
    fn single_atom_is_not_separable() {
        let data = Dataset::scalar(&[(1.0, 0.0), (2.0, 1.0)]).unwrap();
        let mu = SupportedMeasure::uniform_scalar(&[0.3]).unwrap();
        let field = build_builtin_risk_field(&data, ModelRule::Linear, Loss::Squared, &mu).unwrap();
        assert!(!field.separable());
    }

    #[test]
    fn perfect_fit_has_zero_risk() {
        let data = Dataset::scalar(&[(1.0, 1.0), (2.0, 2.0)]).unwrap();
        let mu = SupportedMeasure::uniform_scalar(&[1.0]).unwrap();
        let field = build_builtin_risk_field(&data, ModelRule::Linear, Loss::Squared, &mu).unwrap();
        assert_eq!(field.values(), &[0.0]);
    }

    #[test]
    fn affine_model_uses_bias() {
        let data = Dataset::scalar(&[(0.0, 1.0), (1.0, 3.0)]).unwrap();
        let mu = SupportedMeasure::new(
            vec![vec![2.0, 1.0], vec![0.0, 0.0]],
            vec![0.5, 0.5],
            crate::measure::Provenance::Discrete,
        )
        .unwrap();
        let field = build_builtin_risk_field(&data, ModelRule::Affine, Loss::Absolute, &mu).unwrap();
        assert_eq!(field.values(), &[0.0, 2.0]);
        let bad = build_builtin_risk_field(&data, ModelRule::Linear, Loss::Absolute, &mu);
        assert!(matches!(bad, Err(FdrError::Config(_))));
    }

    #[test]
    fn zero_one_margin_loss() {
        let loss = Loss::ZeroOneMargin { margin: 0.5 };
        assert_eq!(loss.eval(1.0, 1.0), 0.0);
        assert_eq!(loss.eval(0.2, 1.0), 1.0);
        assert_eq!(loss.eval(-1.0, 1.0), 1.0);
    }

    #[test]
    fn loss_must_vanish_on_diagonal() {
        let data = Dataset::scalar(&[(1.0, 0.0)]).unwrap();
        let r = build_risk_field(&data, |t, x| t[0] * x[0], |p, y| (p - y).abs() + 1.0, &two_atoms());
        assert!(matches!(r, Err(FdrError::Config(_))));
    }

    #[test]
    fn non_finite_loss_is_an_integrand_error() {
        let data = Dataset::scalar(&[(1.0, 0.0)]).unwrap();
        let r = build_risk_field(&data, |t, _| 1.0 / t[0], |p, y| (p - y).abs(), &two_atoms());
        assert!(matches!(r, Err(FdrError::IntegrandDomain { .. })));
    }

    #[test]
    fn empty_dataset_is_rejected() {
        assert!(Dataset::scalar(&[]).is_err());
    }

    #[test]
    fn expected_risk_examples() {
        let field = RiskField::from_values(vec![0.0, 1.0]).unwrap();
        assert_eq!(expected_risk(&two_atoms(), &field).unwrap(), 0.5);
        let tilted = SupportedMeasure::discrete_scalar(&[0.0, 1.0], vec![0.731059, 0.268941]).unwrap();
        assert!((expected_risk(&tilted, &field).unwrap() - 0.268941).abs() < 1e-6);
        let constant = RiskField::from_values(vec![2.5, 2.5]).unwrap();
        assert_eq!(expected_risk(&two_atoms(), &constant).unwrap(), 2.5);
        let three = RiskField::from_values(vec![0.0, 1.0, 2.0]).unwrap();
        assert!(matches!(
            expected_risk(&two_atoms(), &three),
            Err(FdrError::Alignment { .. })
        ));
    }

    #[test]
    fn rashomon_examples() {
        let mu = two_atoms();
        let field = RiskField::from_values(vec![0.0, 1.0]).unwrap();
        assert_eq!(rashomon_mass(&mu, &field, 0.0).unwrap(), 0.5);
        let shifted = RiskField::from_values(vec![0.5, 1.0]).unwrap();
        assert_eq!(rashomon_mass(&mu, &shifted, 0.2).unwrap(), 0.0);
        assert_eq!(rashomon_mass(&mu, &field, 1.0).unwrap(), 1.0);
    }

    mod props {
        use super::*;
        use crate::measure::Provenance;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn delta_star_is_the_first_level_with_mass(
                values in prop::collection::vec(0.0f64..10.0, 1..30),
            ) {
                let n = values.len();
                let mu = SupportedMeasure::normalized(
                    (0..n).map(|i| vec![i as f64]).collect(), vec![1.0; n], Provenance::Discrete).unwrap();
                let field = RiskField::from_values(values).unwrap();
                let d = field.delta_star();
                prop_assert!(rashomon_mass(&mu, &field, d).unwrap() > 0.0);
                let below = d - 1e-9 * (1.0 + d);
                prop_assert_eq!(rashomon_mass(&mu, &field, below).unwrap(), 0.0);
            }

            #[test]
            fn shifting_mass_to_the_better_atom_lowers_risk(
                a in 0.0f64..5.0, b in 0.0f64..5.0, w in 0.05f64..0.9, shift in 0.01f64..0.09,
            ) {
                prop_assume!(a != b);
                let field = RiskField::from_values(vec![a, b]).unwrap();
                let (lo_idx, hi_idx) = if a < b { (0, 1) } else { (1, 0) };
                let mut w0 = [0.0; 2];
                w0[lo_idx] = w;
                w0[hi_idx] = 1.0 - w;
                let mut w1 = w0;
                w1[lo_idx] += shift;
                w1[hi_idx] -= shift;
                let m0 = SupportedMeasure::discrete_scalar(&[0.0, 1.0], w0.to_vec()).unwrap();
                let m1 = SupportedMeasure::discrete_scalar(&[0.0, 1.0], w1.to_vec()).unwrap();
                prop_assert!(expected_risk(&m1, &field).unwrap() < expected_risk(&m0, &field).unwrap());
            }
        }
    }
}
