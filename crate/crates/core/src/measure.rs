//! Finitely supported reference measures and the expectation engine.
//!
//! Every integral `∫ g dQ` in this crate reduces to a weighted sum over the
//! support of a [`SupportedMeasure`]. Continuous densities enter through
//! [`discretize_density`]. Sums use a fixed pairwise reduction tree so the
//! result does not depend on how the terms are produced.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FdrError, Result};

const WEIGHT_SUM_TOL: f64 = 1e-12;

/// How a measure was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Discrete,
    Quadrature { grid: GridSpec },
    Sample { seed: u64, n: usize },
}

/// One-dimensional quadrature grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Uniform { low: f64, high: f64, nodes: usize },
    Nodes { nodes: Vec<f64> },
}

impl GridSpec {
    /// Nodes together with their cell widths. Interior cells span the
    /// midpoints to the neighbours; the two end cells take the full gap to
    /// their single neighbour, so a uniform grid gets equal cells.
    pub fn cells(&self) -> Result<Vec<(f64, f64)>> {
        let nodes: Vec<f64> = match self {
            GridSpec::Uniform { low, high, nodes } => {
                if *nodes < 2 || !(high > low) || !low.is_finite() || !high.is_finite() {
                    return Err(FdrError::InvalidMeasure(format!(
                        "uniform grid needs low < high and at least 2 nodes (got [{low}, {high}], {nodes})"
                    )));
                }
                let h = (high - low) / (*nodes - 1) as f64;
                (0..*nodes).map(|k| low + h * k as f64).collect()
            }
            GridSpec::Nodes { nodes } => nodes.clone(),
        };
        let n = nodes.len();
        if n < 2 {
            return Err(FdrError::InvalidMeasure("grid needs at least 2 nodes".into()));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) || nodes.iter().any(|x| !x.is_finite()) {
            return Err(FdrError::InvalidMeasure(
                "grid nodes must be finite and strictly increasing".into(),
            ));
        }
        Ok((0..n)
            .map(|i| {
                let width = if i == 0 {
                    nodes[1] - nodes[0]
                } else if i == n - 1 {
                    nodes[n - 1] - nodes[n - 2]
                } else {
                    0.5 * (nodes[i + 1] - nodes[i - 1])
                };
                (nodes[i], width)
            })
            .collect())
    }
}

/// Probability measure with finite support: distinct points with positive
/// weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupportedMeasure {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
    provenance: Provenance,
}

impl SupportedMeasure {
    /// Builds a measure from pre-normalized weights.
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if points.is_empty() {
            return Err(FdrError::EmptySupport);
        }
        if points.len() != weights.len() {
            return Err(FdrError::Alignment {
                expected: points.len(),
                found: weights.len(),
            });
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
            return Err(FdrError::InvalidMeasure(format!(
                "weights must be positive and finite (found {w})"
            )));
        }
        let total = pairwise_sum(&weights);
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(FdrError::InvalidMeasure(format!("weights sum to {total}, expected 1")));
        }
        let dim = points[0].len();
        let mut seen = HashSet::with_capacity(points.len());
        for p in &points {
            if p.len() != dim {
                return Err(FdrError::InvalidMeasure("support points have mixed dimensions".into()));
            }
            if p.iter().any(|c| !c.is_finite()) {
                return Err(FdrError::InvalidMeasure(format!("non-finite support point {p:?}")));
            }
            // +0.0 and -0.0 are the same point
            let key: Vec<u64> = p.iter().map(|c| (c + 0.0).to_bits()).collect();
            if !seen.insert(key) {
                return Err(FdrError::InvalidMeasure(format!("duplicate support point {p:?}")));
            }
        }
        Ok(SupportedMeasure {
            points,
            weights,
            provenance,
        })
    }

    /// Builds a measure from unnormalized positive masses.
    pub fn normalized(points: Vec<Vec<f64>>, masses: Vec<f64>, provenance: Provenance) -> Result<Self> {
        let total = pairwise_sum(&masses);
        if !(total > 0.0) || !total.is_finite() {
            return Err(FdrError::InvalidMeasure(format!(
                "total mass must be positive and finite (got {total})"
            )));
        }
        let mut weights: Vec<f64> = masses.iter().map(|m| m / total).collect();
        // absorb the last rounding residue so the sum is 1 to working precision
        let residue = 1.0 - pairwise_sum(&weights);
        if let Some(w) = weights.iter_mut().max_by(|a, b| a.total_cmp(b)) {
            *w += residue;
        }
        Self::new(points, weights, provenance)
    }

    /// Discrete measure on scalar atoms.
    pub fn discrete_scalar(atoms: &[f64], weights: Vec<f64>) -> Result<Self> {
        Self::new(atoms.iter().map(|a| vec![*a]).collect(), weights, Provenance::Discrete)
    }

    /// Uniform measure on scalar atoms.
    pub fn uniform_scalar(atoms: &[f64]) -> Result<Self> {
        let n = atoms.len();
        Self::normalized(
            atoms.iter().map(|a| vec![*a]).collect(),
            vec![1.0; n],
            Provenance::Discrete,
        )
    }

    /// `n` atoms drawn uniformly from `[-1, 1]^dim` with random positive
    /// weights, reproducible from `seed`.
    pub fn sample(n: usize, dim: usize, seed: u64) -> Result<Self> {
        if n == 0 || dim == 0 {
            return Err(FdrError::EmptySupport);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = (0..n)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let masses = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
        Self::normalized(points, masses, Provenance::Sample { seed, n })
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `Σᵢ wᵢ·g(θᵢ)`.
    pub fn expectation(&self, g: impl Fn(&[f64]) -> f64) -> Result<f64> {
        self.expectation_indexed(|i| {
            let v = g(&self.points[i]);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(FdrError::IntegrandDomain {
                    theta: self.points[i].clone(),
                    value: v,
                })
            }
        })
    }

    /// `Σᵢ wᵢ·g(i)` for integrands defined per support index. The first
    /// error in index order is returned.
    pub fn expectation_indexed(&self, g: impl Fn(usize) -> Result<f64>) -> Result<f64> {
        let terms = self
            .weights
            .iter()
            .enumerate()
            .map(|(i, w)| g(i).map(|v| w * v))
            .collect::<Result<Vec<f64>>>()?;
        Ok(pairwise_sum(&terms))
    }
}

/// Anything that carries a weight vector aligned with a support.
pub trait Weighted {
    fn weights(&self) -> &[f64];
}

impl Weighted for SupportedMeasure {
    fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Pairwise (cascade) summation with a fixed reduction tree.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 8;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// `Σᵢ wᵢ·vᵢ` with the pairwise reduction.
pub fn weighted_sum(weights: &[f64], values: &[f64]) -> Result<f64> {
    if weights.len() != values.len() {
        return Err(FdrError::Alignment {
            expected: weights.len(),
            found: values.len(),
        });
    }
    let terms: Vec<f64> = weights.iter().zip(values).map(|(w, v)| w * v).collect();
    Ok(pairwise_sum(&terms))
}

/// Discretizes a nonnegative 1-D density on a grid. Nodes where the
/// density vanishes are left out of the support.
pub fn discretize_density(density: impl Fn(f64) -> f64, grid: &GridSpec) -> Result<SupportedMeasure> {
    let mut points = Vec::new();
    let mut masses = Vec::new();
    for (x, width) in grid.cells()? {
        let d = density(x);
        if !(d >= 0.0) || !d.is_finite() {
            return Err(FdrError::IntegrandDomain {
                theta: vec![x],
                value: d,
            });
        }
        if d > 0.0 {
            points.push(vec![x]);
            masses.push(d * width);
        }
    }
    if points.is_empty() {
        return Err(FdrError::EmptySupport);
    }
    SupportedMeasure::normalized(points, masses, Provenance::Quadrature { grid: grid.clone() })
}

/// Densities selectable by name from configuration files.
pub fn builtin_density(name: &str) -> Result<fn(f64) -> f64> {
    match name.to_ascii_lowercase().as_str() {
        "gaussian" | "normal" | "standard_normal" => Ok(|x| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()),
        "laplace" => Ok(|x| 0.5 * (-x.abs()).exp()),
        "uniform" => Ok(|_| 1.0),
        _ => Err(FdrError::Config(format!(
            "unknown density '{name}' (expected gaussian, laplace or uniform)"
        ))),
    }
}
