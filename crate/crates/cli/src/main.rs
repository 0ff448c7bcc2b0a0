use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fdiv_erm::experiment::{run_experiment, ExperimentConfig, LambdaStarOutcome, Mode, Route};
use fdiv_erm::FdrError;

#[derive(Parser)]
#[command(
    name = "fdiv-erm",
    version,
    about = "f-divergence regularized ERM: normalization, duality and continuation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for N(λ) at every grid point.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = RouteArg::Primal)]
        route: RouteArg,
    },
    /// Solve primal and dual and report the duality gap.
    Certify {
        #[command(flatten)]
        common: Common,
    },
    /// Integrate N along the grid and compare with direct solves.
    Path {
        #[command(flatten)]
        common: Common,
    },
    /// Locate the left end of the feasible set of λ.
    LambdaStar {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory [default: the config's `output`, else `out`].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RouteArg {
    Primal,
    Dual,
}

fn report(err: &FdrError) -> ExitCode {
    let body = serde_json::json!({
        "error": {
            "kind": err.kind(),
            "message": err.to_string(),
        }
    });
    eprintln!("{body}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (common, mode, route) = match cli.command {
        Command::Solve { common, route } => (
            common,
            Mode::Solve,
            match route {
                RouteArg::Primal => Route::Primal,
                RouteArg::Dual => Route::Dual,
            },
        ),
        Command::Certify { common } => (common, Mode::Certify, Route::Primal),
        Command::Path { common } => (common, Mode::Path, Route::Primal),
        Command::LambdaStar { common } => (common, Mode::LambdaStar, Route::Primal),
    };

    let mut cfg = match ExperimentConfig::from_path(&common.config) {
        Ok(cfg) => cfg,
        Err(e) => return report(&e),
    };
    // the subcommand decides the mode
    cfg.mode = mode;
    cfg.route = route;
    if let Some(eps) = common.epsilon {
        cfg.solver.epsilon = eps;
    }
    if let Some(n) = common.max_iters {
        cfg.solver.max_iters = n;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let out = common
        .out
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"));

    let outcome = match run_experiment(&cfg, &out) {
        Ok(o) => o,
        Err(e) => return report(&e),
    };
    let rows = &outcome.summary.rows;
    let feasible = rows.iter().filter(|r| r.feasible).count();
    println!(
        "{}: {feasible}/{} feasible, delta* = {}, results in {}",
        outcome.summary.generator,
        rows.len(),
        outcome.summary.delta_star,
        out.display()
    );
    if let Some(p) = &outcome.summary.path {
        match (p.max_rel_err, &p.error) {
            (Some(e), _) => println!("path: {} nodes, max relative error {e:e}", p.nodes),
            (None, Some(msg)) => println!("path failed: {msg}"),
            _ => {}
        }
    }
    match &outcome.summary.lambda_star {
        Some(LambdaStarOutcome::Estimate {
            lambda_star,
            at_or_below_lower,
            ..
        }) => {
            let rel = if *at_or_below_lower { "<=" } else { "~" };
            println!("lambda* {rel} {lambda_star}");
        }
        Some(LambdaStarOutcome::Failed { detail, .. }) => println!("lambda* not found: {detail}"),
        None => {}
    }
    ExitCode::SUCCESS
}
