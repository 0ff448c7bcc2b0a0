//! Config-driven batch runs behind the command-line front-end.
//!
//! A run sweeps a list of regularization factors and writes
//!
//! - `results.csv`: `lambda,beta,primal,dual,gap,iterations,feasible`
//! - `summary.json`: `δ*`, instance hash and per-row diagnostics
//! - `path.csv` in path mode, `lambda_star.json` in lambda-star mode.
//!
//! Solver failures become rows with `feasible = false`; only invalid
//! configs abort a run.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::continuation::{integrate_path, linspace, logspace, PathConfig, Truncation};
use crate::dual::{certify, dual_objective, solve_dual};
use crate::error::{FdrError, Result};
use crate::generators::{builtin_generator, FGenerator};
use crate::measure::{builtin_density, discretize_density, GridSpec, Provenance, SupportedMeasure};
use crate::normalize::{estimate_lambda_star, solve_normalization, LambdaStarEstimate, SolveConfig};
use crate::risk::{build_builtin_risk_field, Dataset, Loss, ModelRule, RiskField};
use crate::tilt::{primal_value, tilt_measure};

pub const RESULTS_HEADER: &str = "lambda,beta,primal,dual,gap,iterations,feasible";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Solve,
    Certify,
    Path,
    LambdaStar,
}

/// Which problem `solve` mode works on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    #[default]
    Primal,
    Dual,
}

/// A support point written either as a scalar or as a vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PointSpec {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl PointSpec {
    fn into_vec(self) -> Vec<f64> {
        match self {
            PointSpec::Scalar(x) => vec![x],
            PointSpec::Vector(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureSpec {
    Discrete {
        points: Vec<PointSpec>,
        weights: Vec<f64>,
    },
    Grid {
        density: String,
        low: f64,
        high: f64,
        nodes: usize,
    },
    /// `n` points drawn uniformly from `[-1, 1]^dim`, with random weights.
    Sample {
        n: usize,
        #[serde(default = "one")]
        dim: usize,
        /// Falls back to the top-level seed.
        seed: Option<u64>,
    },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LossSpec {
    Named(String),
    Full(Loss),
}

impl LossSpec {
    fn resolve(&self) -> Result<Loss> {
        match self {
            LossSpec::Full(loss) => Ok(*loss),
            LossSpec::Named(name) => match name.to_ascii_lowercase().replace('-', "_").as_str() {
                "squared" => Ok(Loss::Squared),
                "absolute" => Ok(Loss::Absolute),
                "zero_one" | "zero_one_margin" => Ok(Loss::ZeroOneMargin { margin: 0.0 }),
                _ => Err(FdrError::Config(format!("unknown loss `{name}`"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RiskSpec {
    Values {
        risk_values: Vec<f64>,
    },
    Dataset {
        pairs: Vec<(PointSpec, f64)>,
        loss: LossSpec,
        #[serde(default = "default_model")]
        model: ModelRule,
    },
}

fn default_model() -> ModelRule {
    ModelRule::Linear
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub low: f64,
    pub high: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaSpec {
    List(Vec<f64>),
    Logspace { logspace: Span },
    Linspace { linspace: Span },
}

impl LambdaSpec {
    pub fn expand(&self) -> Result<Vec<f64>> {
        let grid = match self {
            LambdaSpec::List(v) => v.clone(),
            LambdaSpec::Logspace { logspace: s } => {
                if !(s.low > 0.0) {
                    return Err(FdrError::Config("logspace needs low > 0".into()));
                }
                logspace(s.low, s.high, s.n)
            }
            LambdaSpec::Linspace { linspace: s } => linspace(s.low, s.high, s.n),
        };
        if grid.is_empty() {
            return Err(FdrError::Config("lambda grid is empty".into()));
        }
        if let Some(bad) = grid.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(FdrError::Config(format!(
                "lambda grid must be positive and finite, found {bad}"
            )));
        }
        Ok(grid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub generator: String,
    pub measure: MeasureSpec,
    pub risk: RiskSpec,
    pub lambdas: LambdaSpec,
    #[serde(default)]
    pub solver: SolveConfig,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub route: Route,
    /// `(lo, hi)` searched in lambda-star mode.
    #[serde(default = "default_probe_range")]
    pub probe_range: (f64, f64),
    pub drift_ceiling: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Output directory; the `--out` flag takes precedence.
    pub output: Option<PathBuf>,
}

fn default_probe_range() -> (f64, f64) {
    (1e-6, 1e3)
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// A validated config with its measure and risk materialized.
#[derive(Debug, Clone)]
pub struct Instance {
    pub generator: FGenerator,
    pub measure: SupportedMeasure,
    pub field: RiskField,
    pub lambdas: Vec<f64>,
}

impl Instance {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.solver.validate()?;
        let generator = builtin_generator(&cfg.generator)?;
        let lambdas = cfg.lambdas.expand()?;
        if cfg.mode == Mode::Path && lambdas.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(FdrError::Config("path mode needs a strictly increasing grid".into()));
        }
        let measure = match &cfg.measure {
            MeasureSpec::Discrete { points, weights } => SupportedMeasure::new(
                points.iter().cloned().map(PointSpec::into_vec).collect(),
                weights.clone(),
                Provenance::Discrete,
            )?,
            MeasureSpec::Grid {
                density,
                low,
                high,
                nodes,
            } => discretize_density(
                builtin_density(density)?,
                &GridSpec::Uniform {
                    low: *low,
                    high: *high,
                    nodes: *nodes,
                },
            )?,
            MeasureSpec::Sample { n, dim, seed } => SupportedMeasure::sample(*n, *dim, seed.unwrap_or(cfg.seed))?,
        };
        let field = match &cfg.risk {
            RiskSpec::Values { risk_values } => RiskField::aligned(risk_values.clone(), &measure)?,
            RiskSpec::Dataset { pairs, loss, model } => {
                let data = Dataset::new(pairs.iter().cloned().map(|(x, y)| (x.into_vec(), y)).collect())?;
                build_builtin_risk_field(&data, *model, loss.resolve()?, &measure)?
            }
        };
        Ok(Instance {
            generator,
            measure,
            field,
            lambdas,
        })
    }

    /// SHA-256 over the generator name and the little-endian bytes of
    /// support points, weights and risk values.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.generator.name().as_bytes());
        for (p, (w, l)) in self
            .measure
            .points()
            .iter()
            .zip(self.measure.weights().iter().zip(self.field.values()))
        {
            h.update((p.len() as u64).to_le_bytes());
            for x in p {
                h.update(x.to_le_bytes());
            }
            h.update(w.to_le_bytes());
            h.update(l.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// One line of `results.csv` plus the diagnostics kept for the summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub beta: f64,
    pub primal: f64,
    /// Optimal value of the dual problem, `−G(β̂)`.
    pub dual: f64,
    /// `primal − dual`.
    pub gap: f64,
    pub iterations: usize,
    pub feasible: bool,
    pub failure_reason: Option<String>,
    pub failure_detail: Option<String>,
    /// Certify mode: zero gap and `2ε` agreement.
    pub certified: Option<bool>,
}

impl SweepRow {
    fn failed(lambda: f64, err: &FdrError) -> Self {
        SweepRow {
            lambda,
            beta: f64::NAN,
            primal: f64::NAN,
            dual: f64::NAN,
            gap: f64::NAN,
            iterations: match err {
                FdrError::NoConvergence { iterations, .. } => *iterations,
                _ => 0,
            },
            feasible: false,
            failure_reason: Some(err.kind().to_string()),
            failure_detail: Some(err.to_string()),
            certified: None,
        }
    }

    fn csv_line(&self, out: &mut String) {
        let _ = writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{}",
            self.lambda, self.beta, self.primal, self.dual, self.gap, self.iterations, self.feasible
        );
    }
}

/// Gap tolerance used for the certified flag, relative to `1 + |primal|`.
pub const CERTIFY_GAP_TOL: f64 = 1e-8;

fn solve_row(inst: &Instance, lambda: f64, mode: Mode, route: Route, cfg: &SolveConfig) -> Result<SweepRow> {
    let (gen, mu, field) = (&inst.generator, &inst.measure, &inst.field);
    let row = match (mode, route) {
        (Mode::Certify, _) => {
            let cert = certify(gen, mu, field, lambda, cfg)?;
            SweepRow {
                lambda,
                beta: cert.primal.beta,
                primal: cert.dual.primal_value,
                dual: -cert.dual.dual_value,
                gap: cert.dual.gap,
                iterations: cert.primal.iterations,
                feasible: true,
                failure_reason: None,
                failure_detail: None,
                certified: Some(cert.holds(CERTIFY_GAP_TOL, cfg.epsilon)),
            }
        }
        (_, Route::Dual) => {
            let rep = solve_dual(gen, mu, field, lambda, cfg)?;
            SweepRow {
                lambda,
                beta: rep.beta_hat,
                primal: rep.primal_value,
                dual: -rep.dual_value,
                gap: rep.gap,
                iterations: rep.iterations,
                feasible: true,
                failure_reason: None,
                failure_detail: None,
                certified: None,
            }
        }
        (_, Route::Primal) => {
            let rep = solve_normalization(gen, mu, field, lambda, cfg)?;
            let tilted = tilt_measure(gen, mu, field, lambda, rep.beta)?;
            let primal = primal_value(gen, &tilted, field)?;
            // dual objective at the primal root; finite whenever the tilt is
            let dual = -dual_objective(gen, mu, field, lambda, rep.beta)?;
            SweepRow {
                lambda,
                beta: rep.beta,
                primal,
                dual,
                gap: primal - dual,
                iterations: rep.iterations,
                feasible: true,
                failure_reason: None,
                failure_detail: None,
                certified: None,
            }
        }
    };
    Ok(row)
}

#[derive(Debug, Clone, Serialize)]
pub struct PathSummary {
    pub max_rel_err: Option<f64>,
    pub nodes: usize,
    pub truncated: Option<Truncation>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum LambdaStarOutcome {
    Estimate {
        lambda_star: f64,
        at_or_below_lower: bool,
        probe_range: (f64, f64),
    },
    Failed {
        error: String,
        detail: String,
        probe_range: (f64, f64),
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub generator: String,
    pub mode: Mode,
    pub route: Route,
    pub atoms: usize,
    pub delta_star: f64,
    pub max_risk: f64,
    pub separable: bool,
    pub instance_sha256: String,
    pub solver: SolveConfig,
    pub seed: u64,
    pub rows: Vec<SweepRow>,
    pub path: Option<PathSummary>,
    pub lambda_star: Option<LambdaStarOutcome>,
}

/// Everything a run produces, before it is written to disk.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub summary: Summary,
    pub results_csv: String,
    pub path_csv: Option<String>,
}

impl ExperimentOutcome {
    /// Writes the artifacts into `dir`, creating it if needed.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut put = |name: &str, body: &str| -> Result<()> {
            let p = dir.join(name);
            fs::write(&p, body)?;
            written.push(p);
            Ok(())
        };
        put("results.csv", &self.results_csv)?;
        put("summary.json", &(serde_json::to_string_pretty(&self.summary)? + "\n"))?;
        if let Some(csv) = &self.path_csv {
            put("path.csv", csv)?;
        }
        if let Some(ls) = &self.summary.lambda_star {
            put("lambda_star.json", &(serde_json::to_string_pretty(ls)? + "\n"))?;
        }
        Ok(written)
    }
}

/// Runs the sweep described by `cfg` without touching the filesystem.
pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let inst = Instance::from_config(cfg)?;
    if !inst.field.separable() {
        warn!("risk is constant on the support; every solve will report a degenerate instance");
    }
    info!(
        "{} on {} atoms, {} values of lambda, mode {:?}",
        inst.generator.name(),
        inst.measure.len(),
        inst.lambdas.len(),
        cfg.mode
    );

    let rows: Vec<SweepRow> = inst
        .lambdas
        .par_iter()
        .map(|l| solve_row(&inst, *l, cfg.mode, cfg.route, &cfg.solver).unwrap_or_else(|e| SweepRow::failed(*l, &e)))
        .collect();

    let mut results_csv = format!("{RESULTS_HEADER}\n");
    for row in &rows {
        row.csv_line(&mut results_csv);
    }

    let (path, path_csv) = if cfg.mode == Mode::Path {
        let (summary, csv) = run_path(&inst, cfg, &rows);
        (Some(summary), csv)
    } else {
        (None, None)
    };

    let lambda_star = (cfg.mode == Mode::LambdaStar).then(|| {
        match estimate_lambda_star(
            &inst.generator,
            &inst.measure,
            &inst.field,
            cfg.probe_range,
            &cfg.solver,
        ) {
            Ok(LambdaStarEstimate {
                value,
                at_or_below_lower,
            }) => LambdaStarOutcome::Estimate {
                lambda_star: value,
                at_or_below_lower,
                probe_range: cfg.probe_range,
            },
            Err(e) => LambdaStarOutcome::Failed {
                error: e.kind().to_string(),
                detail: e.to_string(),
                probe_range: cfg.probe_range,
            },
        }
    });

    let summary = Summary {
        generator: inst.generator.name().to_string(),
        mode: cfg.mode,
        route: cfg.route,
        atoms: inst.measure.len(),
        delta_star: inst.field.delta_star(),
        max_risk: inst.field.max_value(),
        separable: inst.field.separable(),
        instance_sha256: inst.hash(),
        solver: cfg.solver,
        seed: cfg.seed,
        rows,
        path,
        lambda_star,
    };
    Ok(ExperimentOutcome {
        summary,
        results_csv,
        path_csv,
    })
}

fn run_path(inst: &Instance, cfg: &ExperimentConfig, rows: &[SweepRow]) -> (PathSummary, Option<String>) {
    let failed = |e: &FdrError| PathSummary {
        max_rel_err: None,
        nodes: 0,
        truncated: None,
        error: Some(e.to_string()),
    };
    let first = &rows[0];
    let beta0 = if first.feasible {
        first.beta
    } else {
        let reason = first.failure_detail.clone().unwrap_or_default();
        let e = FdrError::Config(format!(
            "path start lambda = {} is not solvable: {reason}",
            first.lambda
        ));
        return (failed(&e), None);
    };
    let path_cfg = PathConfig {
        solve: cfg.solver,
        drift_ceiling: cfg.drift_ceiling,
        ..PathConfig::default()
    };
    match integrate_path(
        &inst.generator,
        &inst.measure,
        &inst.field,
        inst.lambdas[0],
        beta0,
        &inst.lambdas,
        &path_cfg,
    ) {
        Ok(path) => (
            PathSummary {
                max_rel_err: Some(path.max_rel_err),
                nodes: path.lambdas.len(),
                truncated: path.truncated.clone(),
                error: None,
            },
            Some(path.to_csv()),
        ),
        Err(e) => (failed(&e), None),
    }
}

/// [`run`] followed by [`ExperimentOutcome::write`].
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentOutcome> {
    let outcome = run(cfg)?;
    outcome.write(out_dir)?;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(generator: &str, mode: &str, lambdas: &str) -> ExperimentConfig {
        ExperimentConfig::from_json(&format!(
            r#"{{
                "generator": "{generator}",
                "measure": {{"type": "discrete", "points": [[0.0], [1.0]], "weights": [0.5, 0.5]}},
                "risk": {{"risk_values": [0.0, 1.0]}},
                "lambdas": {lambdas},
                "mode": "{mode}",
                "probe_range": [0.01, 1.0]
            }}"#
        ))
        .unwrap()
    }

    #[test]
    fn certify_kl_single_row() {
        let out = run(&config("kl", "certify", "[1.0]")).unwrap();
        let mut lines = out.results_csv.lines();
        assert_eq!(lines.next(), Some(RESULTS_HEADER));
        assert_eq!(lines.clone().count(), 1);
        let row = &out.summary.rows[0];
        assert!(row.feasible);
        assert!(row.gap.abs() <= 1e-8);
        assert!((row.beta + 1.379885).abs() < 1e-6);
        assert!((row.primal - 0.379885).abs() < 1e-6);
        assert_eq!(row.certified, Some(true));
        assert_eq!(out.summary.delta_star, 0.0);
    }

    #[test]
    fn lambda_star_chi_square() {
        let out = run(&config("chi_square", "lambda_star", "[0.1, 1.0]")).unwrap();
        match out.summary.lambda_star.unwrap() {
            LambdaStarOutcome::Estimate { lambda_star, .. } => {
                assert!((lambda_star - 0.25).abs() < 1e-3)
            }
            other => panic!("{other:?}"),
        }
        // failures are rows, not aborts
        assert!(!out.summary.rows[0].feasible);
        assert_eq!(out.summary.rows[0].failure_reason.as_deref(), Some("infeasible_lambda"));
        assert!(out.summary.rows[1].feasible);
        assert!(out.results_csv.lines().nth(1).unwrap().ends_with(",false"));
    }

    #[test]
    fn empty_grid_is_invalid() {
        assert!(matches!(run(&config("kl", "solve", "[]")), Err(FdrError::Config(_))));
        assert!(run(&config("kl", "solve", "[1.0, -2.0]")).is_err());
        assert!(run(&config("nope", "solve", "[1.0]")).is_err());
    }

    #[test]
    fn rows_renormalize_from_printed_values() {
        let cfg = config(
            "squared_hellinger",
            "solve",
            r#"{"logspace": {"low": 0.1, "high": 10.0, "n": 7}}"#,
        );
        let out = run(&cfg).unwrap();
        let inst = Instance::from_config(&cfg).unwrap();
        for line in out.results_csv.lines().skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            let lambda: f64 = cols[0].parse().unwrap();
            let beta: f64 = cols[1].parse().unwrap();
            let sol = tilt_measure(&inst.generator, &inst.measure, &inst.field, lambda, beta).unwrap();
            assert!((sol.total_mass() - 1.0).abs() <= 2.0 * cfg.solver.epsilon);
        }
    }

    #[test]
    fn dual_route_matches_primal_route() {
        let mut cfg = config("reverse_kl", "solve", "[0.5, 2.0]");
        let primal = run(&cfg).unwrap();
        cfg.route = Route::Dual;
        let dual = run(&cfg).unwrap();
        for (a, b) in primal.summary.rows.iter().zip(&dual.summary.rows) {
            assert!((a.beta - b.beta).abs() <= 2.0 * cfg.solver.epsilon);
            assert!((a.primal - b.primal).abs() <= 1e-9);
        }
    }

    #[test]
    fn path_mode_writes_the_path_table() {
        let out = run(&config(
            "chi_square",
            "path",
            r#"{"linspace": {"low": 1.0, "high": 10.0, "n": 50}}"#,
        ))
        .unwrap();
        let csv = out.path_csv.unwrap();
        assert_eq!(csv.lines().count(), 51);
        assert!(out.summary.path.unwrap().max_rel_err.unwrap() < 1e-10);
    }

    #[test]
    fn dataset_risk_and_grid_measure() {
        let cfg = ExperimentConfig::from_json(
            r#"{
                "generator": "kl",
                "measure": {"type": "grid", "density": "gaussian", "low": -3, "high": 3, "nodes": 61},
                "risk": {"pairs": [[1.0, 0.5], [2.0, 1.1], [-1.0, -0.4]], "loss": "squared"},
                "lambdas": [0.5]
            }"#,
        )
        .unwrap();
        let out = run(&cfg).unwrap();
        assert_eq!(out.summary.atoms, 61);
        assert!(out.summary.rows[0].feasible);
    }

    #[test]
    fn identical_configs_give_identical_bytes() {
        let text = r#"{
            "generator": "kl",
            "measure": {"type": "sample", "n": 40, "dim": 2},
            "risk": {"pairs": [[[1.0, 0.0], 1.0], [[0.0, 1.0], -1.0]], "loss": "absolute"},
            "lambdas": {"logspace": {"low": 0.01, "high": 100.0, "n": 9}},
            "mode": "certify",
            "seed": 7
        }"#;
        let a = run(&ExperimentConfig::from_json(text).unwrap()).unwrap();
        let b = run(&ExperimentConfig::from_json(text).unwrap()).unwrap();
        assert_eq!(a.results_csv, b.results_csv);
        assert_eq!(a.summary.instance_sha256, b.summary.instance_sha256);
        assert_eq!(a.summary.instance_sha256.len(), 64);
    }

    #[test]
    fn write_creates_the_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_experiment(&config("chi_square", "lambda_star", "[1.0]"), dir.path()).unwrap();
        for name in ["results.csv", "summary.json", "lambda_star.json"] {
            assert!(dir.path().join(name).exists(), "{name}");
        }
        let summary: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary["delta_star"], 0.0);
        assert_eq!(summary["rows"].as_array().unwrap().len(), out.summary.rows.len());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let r = ExperimentConfig::from_json(
            r#"{"generator": "kl", "measure": {"type": "discrete", "points": [0, 1], "weights": [0.5, 0.5]},
                "risk": {"risk_values": [0, 1]}, "lambdas": [1], "lamdba": 3}"#,
        );
        assert!(r.is_err());
    }
}
