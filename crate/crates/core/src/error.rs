use thiserror::Error;

/// Which side of an admissible interval an argument fell on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Below,
    Above,
}

#[derive(Debug, Error)]
pub enum FdrError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{what}: argument {arg} lies outside the domain")]
    Domain { what: &'static str, arg: f64, side: Side },

    #[error("conjugate is unbounded at t = {t} (argmax pinned at the upper grid boundary {upper})")]
    UnboundedConjugate { t: f64, upper: f64 },

    #[error("integrand is not finite ({value}) at support point {theta:?}")]
    IntegrandDomain { theta: Vec<f64>, value: f64 },

    #[error("measure has empty support")]
    EmptySupport,

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("alignment error: expected {expected} values, found {found}")]
    Alignment { expected: usize, found: usize },

    #[error("infeasible beta {beta}: inverse derivative undefined or nonpositive at support point {index} (theta = {theta:?}, t = {t})")]
    InfeasibleBeta {
        beta: f64,
        index: usize,
        theta: Vec<f64>,
        t: f64,
        side: Side,
    },

    #[error("infinite conjugate at t = {t} (beta = {beta} is outside the dual domain)")]
    InfiniteConjugate { beta: f64, t: f64, side: Side },

    #[error("degenerate instance: empirical risk is constant on the support")]
    DegenerateInstance,

    #[error("lambda = {lambda} is infeasible: no normalizing beta could be bracketed (last bracket {bracket:?})")]
    InfeasibleLambda { lambda: f64, bracket: (f64, f64) },

    #[error("no convergence after {iterations} iterations (bracket {bracket:?}, residual {residual})")]
    NoConvergence {
        iterations: usize,
        bracket: (f64, f64),
        residual: f64,
    },

    #[error("lambda-star probe: solve fails at the upper end {hi} of the probe range")]
    LambdaStarNotReached { hi: f64 },

    #[error("generator contract violated: {0}")]
    GeneratorContract(String),

    #[error("continuation drift {rel_err:e} at lambda = {lambda} exceeds ceiling {ceiling:e}")]
    Drift { lambda: f64, rel_err: f64, ceiling: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl FdrError {
    /// Short machine-readable tag, used in CSV/JSON failure records.
    pub fn kind(&self) -> &'static str {
        match self {
            FdrError::Config(_) => "config",
            FdrError::Domain { .. } => "domain",
            FdrError::UnboundedConjugate { .. } => "unbounded_conjugate",
            FdrError::IntegrandDomain { .. } => "integrand_domain",
            FdrError::EmptySupport => "empty_support",
            FdrError::InvalidMeasure(_) => "invalid_measure",
            FdrError::InvalidDataset(_) => "invalid_dataset",
            FdrError::Alignment { .. } => "alignment",
            FdrError::InfeasibleBeta { .. } => "infeasible_beta",
            FdrError::InfiniteConjugate { .. } => "infinite_conjugate",
            FdrError::DegenerateInstance => "degenerate_instance",
            FdrError::InfeasibleLambda { .. } => "infeasible_lambda",
            FdrError::NoConvergence { .. } => "no_convergence",
            FdrError::LambdaStarNotReached { .. } => "lambda_star_not_reached",
            FdrError::GeneratorContract(_) => "generator_contract",
            FdrError::Drift { .. } => "drift",
            FdrError::Io(_) => "io",
            FdrError::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, FdrError>;
