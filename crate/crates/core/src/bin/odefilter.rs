use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use odefilter::harness::{
    parse_params, run_bench_step, run_solve, run_stiffness, run_work_precision, BenchStepOptions,
    StiffnessOptions, WorkPrecisionOptions,
};
use odefilter::solver::{SolverConfig, TimeGrid};

/// Probabilistic ODE solvers and their benchmark experiments.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one problem and write its trajectory as JSON lines.
    Solve(SolveArgs),
    /// Time single steps on Lorenz96 across dimensions.
    BenchStep(BenchArgs),
    /// Final-state error against a tight reference across tolerances.
    WorkPrecision(WorkPrecisionArgs),
    /// Step counts on Van der Pol across stiffness parameters.
    Stiffness(StiffnessArgs),
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    problem: String,
    /// Problem parameter override, repeatable.
    #[arg(long = "param", value_name = "KEY=VALUE")]
    params: Vec<String>,
    #[arg(long, default_value_t = 3)]
    order: usize,
    #[arg(long, default_value = "ek1-diag")]
    solver: String,
    #[arg(long, default_value = "tv-scalar")]
    diffusion: String,
    #[arg(long, default_value_t = 1e-6)]
    rtol: f64,
    #[arg(long, default_value_t = 1e-6)]
    atol: f64,
    /// Use N equal steps instead of adaptive control.
    #[arg(long, value_name = "N")]
    fixed_steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Record every k-th accepted step; 0 keeps only the first and last.
    #[arg(long, default_value_t = 1)]
    save_every: usize,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [16usize, 32, 64, 128, 256])]
    dims: Vec<usize>,
    #[arg(long = "order", value_delimiter = ',', default_values_t = [2usize, 4, 6])]
    orders: Vec<usize>,
    #[arg(long = "solver", value_delimiter = ',', default_values_t = odefilter::solver::VARIANTS.map(String::from))]
    solvers: Vec<String>,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 4096)]
    dense_cutoff: usize,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct WorkPrecisionArgs {
    #[arg(long, default_value = "pleiades")]
    problem: String,
    #[arg(long = "param", value_name = "KEY=VALUE")]
    params: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = [1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9])]
    tols: Vec<f64>,
    #[arg(long = "solver", value_delimiter = ',', default_values_t = ["ek1-diag".to_string(), "ek0-blockdiag".to_string()])]
    solvers: Vec<String>,
    #[arg(long, default_value_t = 3)]
    order: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// RK4 steps for the reference solution.
    #[arg(long, default_value_t = 2_000_000)]
    reference_steps: usize,
    /// Run configurations concurrently.
    #[arg(long)]
    parallel: bool,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct StiffnessArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [1e-1, 1e0, 1e1, 1e2, 1e3])]
    mus: Vec<f64>,
    #[arg(long = "solver", value_delimiter = ',', default_values_t = ["ek0-blockdiag".to_string(), "ek1-diag".to_string(), "ek1-dense".to_string()])]
    solvers: Vec<String>,
    #[arg(long, default_value_t = 4)]
    order: usize,
    #[arg(long, default_value_t = 1e-6)]
    rtol: f64,
    #[arg(long, default_value_t = 1e-6)]
    atol: f64,
    #[arg(long, default_value_t = 1_000_000)]
    max_steps: usize,
    #[arg(long)]
    parallel: bool,
    #[arg(long)]
    output: PathBuf,
}

fn solve(a: SolveArgs) -> odefilter::Result<()> {
    let params = parse_params(&a.params)?;
    let mut cfg = SolverConfig::variant(&a.solver, a.order)?
        .with_diffusion(&a.diffusion)?
        .with_tolerances(a.rtol, a.atol);
    if let Some(n) = a.fixed_steps {
        cfg = cfg.with_grid(TimeGrid::FixedSteps(n));
    }
    cfg.save_every = a.save_every;
    let (_, meta) = run_solve(&a.problem, &params, a.seed, &cfg, &a.output)?;
    eprintln!(
        "{}: {} accepted, {} rejected in {:.3} s",
        meta.solver, meta.n_accepted, meta.n_rejected, meta.wall_seconds
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let result = match Cli::parse().command {
        Command::Solve(a) => solve(a),
        Command::BenchStep(a) => run_bench_step(
            &BenchStepOptions {
                dims: a.dims,
                orders: a.orders,
                solvers: a.solvers,
                repeats: a.repeats,
                dense_cutoff: a.dense_cutoff,
                ..Default::default()
            },
            &a.output,
        )
        .map(drop),
        Command::WorkPrecision(a) => parse_params(&a.params).and_then(|params| {
            run_work_precision(
                &WorkPrecisionOptions {
                    problem: a.problem,
                    params,
                    seed: a.seed,
                    tols: a.tols,
                    solvers: a.solvers,
                    order: a.order,
                    reference_steps: a.reference_steps,
                    parallel: a.parallel,
                },
                &a.output,
            )
            .map(drop)
        }),
        Command::Stiffness(a) => run_stiffness(
            &StiffnessOptions {
                mus: a.mus,
                solvers: a.solvers,
                order: a.order,
                rtol: a.rtol,
                atol: a.atol,
                max_steps: a.max_steps,
                parallel: a.parallel,
            },
            &a.output,
        )
        .map(drop),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
