//! Experiment drivers behind the command-line tool.
//!
//! Trajectories are written as JSON lines: one [`SolutionRecord`] per line,
//! followed by a single `{"metadata": …}` line. Benchmarks are written as
//! CSV with a header row and a fixed column order. Floats are printed in
//! shortest round-trip form by both writers.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::initialize;
use crate::problems::{from_registry, lorenz96, vanderpol, OdeProblem};
use crate::solver::{solve_partial, Solution, SolverConfig, TimeGrid, VARIANTS};
use crate::stepper::{step_with_prior, Structure};

/// Environment variable capping worker threads for parallel experiments.
pub const THREADS_ENV: &str = "ODEFILTER_THREADS";

/// Parses `key=value` pairs with numeric values.
pub fn parse_params<S: AsRef<str>>(pairs: &[S]) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for pair in pairs {
        let pair = pair.as_ref();
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("expected key=value, got '{pair}'")))?;
        let value: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("parameter {k} is not a number: '{v}'")))?;
        if out.insert(k.trim().to_string(), value).is_some() {
            return Err(Error::InvalidArgument(format!("parameter {k} given twice")));
        }
    }
    Ok(out)
}

/// Runs `f` on a pool sized by [`THREADS_ENV`] (or rayon's own default) when `parallel`.
fn with_pool<T: Send>(parallel: bool, f: impl FnOnce() -> T + Send) -> Result<T> {
    if !parallel {
        return Ok(f());
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.parse().map_err(|_| {
            Error::Config(format!(
                "{THREADS_ENV} must be a positive integer, got '{v}'"
            ))
        })?;
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn map_configs<I: Sync, O: Send>(
    items: &[I],
    parallel: bool,
    f: impl Fn(&I) -> O + Sync + Send,
) -> Result<Vec<O>> {
    with_pool(parallel, || {
        if parallel {
            items.par_iter().map(&f).collect()
        } else {
            items.iter().map(&f).collect()
        }
    })
}

/// Trailing line of a trajectory file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveMetadata {
    pub problem: String,
    pub dim: usize,
    pub t0: f64,
    pub tmax: f64,
    pub params: BTreeMap<String, f64>,
    pub notes: BTreeMap<String, String>,
    pub solver: String,
    pub nu: usize,
    pub diffusion: String,
    pub rtol: f64,
    pub atol: f64,
    pub grid: String,
    pub seed: u64,
    pub wall_seconds: f64,
    pub n_accepted: usize,
    pub n_rejected: usize,
    pub init_dt: f64,
    pub completed: bool,
    pub error: Option<String>,
}

#[derive(Serialize)]
struct MetadataLine<'a> {
    metadata: &'a SolveMetadata,
}

fn grid_name(grid: &TimeGrid) -> String {
    match grid {
        TimeGrid::Adaptive => "adaptive".into(),
        TimeGrid::FixedSteps(n) => format!("fixed-steps:{n}"),
        TimeGrid::Fixed(ts) => format!("fixed:{}", ts.len()),
    }
}

/// Builds a registry problem; `seed` fills in the `seed` parameter of problems that use one.
pub fn build_problem(name: &str, params: &BTreeMap<String, f64>, seed: u64) -> Result<OdeProblem> {
    let mut params = params.clone();
    if name == "fhn" {
        params.entry("seed".into()).or_insert(seed as f64);
    }
    from_registry(name, &params)
}

/// Solves a registry problem and writes the trajectory to `output`.
///
/// The file is written even when stepping fails; the failure is then returned.
pub fn run_solve(
    problem_name: &str,
    params: &BTreeMap<String, f64>,
    seed: u64,
    config: &SolverConfig,
    output: &Path,
) -> Result<(Solution, SolveMetadata)> {
    config.validate()?;
    let problem = build_problem(problem_name, params, seed)?;
    let sol = solve_partial(&problem, config)?;
    let meta = SolveMetadata {
        problem: problem.name.clone(),
        dim: problem.dim(),
        t0: problem.t0,
        tmax: problem.tmax,
        params: problem.params.clone(),
        notes: problem.notes.clone(),
        solver: config.variant_name(),
        nu: config.order,
        diffusion: config.diffusion_name().into(),
        rtol: config.rtol,
        atol: config.atol,
        grid: grid_name(&config.grid),
        seed,
        wall_seconds: sol.stats.wall_seconds,
        n_accepted: sol.stats.n_accepted,
        n_rejected: sol.stats.n_rejected,
        init_dt: sol.stats.init_dt,
        completed: sol.completed(),
        error: sol.failure.as_ref().map(|e| e.to_string()),
    };
    let mut w = BufWriter::new(File::create(output)?);
    for rec in &sol.records {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n")?;
    }
    serde_json::to_writer(&mut w, &MetadataLine { metadata: &meta })?;
    w.write_all(b"\n")?;
    w.flush()?;
    match &sol.failure {
        Some(e) => Err(e.clone()),
        None => Ok((sol, meta)),
    }
}

fn write_csv<T: Serialize>(rows: &[T], output: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(output)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads back a table written by one of the benchmark drivers.
pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows: std::result::Result<Vec<T>, csv::Error> = r.deserialize().collect();
    Ok(rows?)
}

fn check_solvers(solvers: &[String]) -> Result<()> {
    if solvers.is_empty() {
        return Err(Error::InvalidArgument("no solvers given".into()));
    }
    for s in solvers {
        if !VARIANTS.contains(&s.as_str()) {
            return Err(Error::Config(format!(
                "unknown solver '{s}', expected one of {VARIANTS:?}"
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchStepOptions {
    pub dims: Vec<usize>,
    pub orders: Vec<usize>,
    pub solvers: Vec<String>,
    pub repeats: usize,
    /// Dense solvers are not attempted above this dimension.
    pub dense_cutoff: usize,
    pub step_size: f64,
    /// Each timed sample repeats the step until it spans at least this long.
    pub min_sample_seconds: f64,
}

impl Default for BenchStepOptions {
    fn default() -> Self {
        Self {
            dims: vec![16, 32, 64, 128, 256],
            orders: vec![2, 4, 6],
            solvers: VARIANTS.iter().map(|s| s.to_string()).collect(),
            repeats: 5,
            dense_cutoff: 4096,
            step_size: 0.01,
            min_sample_seconds: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub solver: String,
    pub nu: usize,
    pub d: usize,
    pub median_seconds: Option<f64>,
    pub min_seconds: Option<f64>,
    /// `ok` or `skipped`.
    pub status: String,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times one step of each (solver, ν, d) on Lorenz96(d).
///
/// One untimed warm-up step precedes the samples. Steps that are faster than
/// `min_sample_seconds` are batched and the batch mean is one sample.
pub fn bench_step(opts: &BenchStepOptions) -> Result<Vec<BenchRow>> {
    if opts.repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be at least 1".into()));
    }
    if opts.dims.is_empty() || opts.orders.is_empty() {
        return Err(Error::InvalidArgument(
            "dims and orders must be non-empty".into(),
        ));
    }
    if opts.dims.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument(
            "dims must be sorted ascending".into(),
        ));
    }
    check_solvers(&opts.solvers)?;
    let mut rows = Vec::new();
    for solver in &opts.solvers {
        for &nu in &opts.orders {
            let cfg = SolverConfig::variant(solver, nu)?;
            cfg.validate()?;
            for &d in &opts.dims {
                let mut row = BenchRow {
                    solver: solver.clone(),
                    nu,
                    d,
                    median_seconds: None,
                    min_seconds: None,
                    status: "skipped".into(),
                };
                if cfg.structure == Structure::Dense && d > opts.dense_cutoff {
                    log::info!("skipping {solver} nu={nu} d={d}: above the dense cutoff");
                    rows.push(row);
                    continue;
                }
                let problem = lorenz96(d, 8.0)?;
                let prior = cfg.prior(d)?;
                let plan = cfg.init_plan(&problem)?;
                let state = initialize(&problem, &prior, &plan, cfg.structure)?;
                let warm = Instant::now();
                std::hint::black_box(step_with_prior(
                    &state,
                    opts.step_size,
                    &cfg,
                    &prior,
                    &problem,
                )?);
                let once = warm.elapsed().as_secs_f64();
                let batch = if once >= opts.min_sample_seconds {
                    1
                } else {
                    ((opts.min_sample_seconds / once.max(1e-9)).ceil() as usize).clamp(1, 10_000)
                };
                let mut samples = Vec::with_capacity(opts.repeats);
                for _ in 0..opts.repeats {
                    let start = Instant::now();
                    for _ in 0..batch {
                        std::hint::black_box(step_with_prior(
                            &state,
                            opts.step_size,
                            &cfg,
                            &prior,
                            &problem,
                        )?);
                    }
                    samples.push(start.elapsed().as_secs_f64() / batch as f64);
                }
                let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
                row.median_seconds = Some(median(&mut samples));
                row.min_seconds = Some(min);
                row.status = "ok".into();
                log::info!(
                    "{solver} nu={nu} d={d}: {:.3e} s",
                    row.median_seconds.unwrap_or(f64::NAN)
                );
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

pub fn run_bench_step(opts: &BenchStepOptions, output: &Path) -> Result<Vec<BenchRow>> {
    let rows = bench_step(opts)?;
    write_csv(&rows, output)?;
    Ok(rows)
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|(x, y)| (x.ln(), y.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Classic fixed-step fourth-order Runge–Kutta over the whole span.
pub fn rk4_final(problem: &OdeProblem, n_steps: usize) -> Result<Vec<f64>> {
    if n_steps == 0 {
        return Err(Error::InvalidArgument(
            "the reference needs at least one step".into(),
        ));
    }
    let d = problem.dim();
    let h = (problem.tmax - problem.t0) / n_steps as f64;
    let mut y = problem.y0.clone();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let mut tmp = vec![0.0; d];
    for n in 0..n_steps {
        let t = problem.t0 + n as f64 * h;
        problem.eval_into(t, &y, &mut k1)?;
        for i in 0..d {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        problem.eval_into(t + 0.5 * h, &tmp, &mut k2)?;
        for i in 0..d {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        problem.eval_into(t + 0.5 * h, &tmp, &mut k3)?;
        for i in 0..d {
            tmp[i] = y[i] + h * k3[i];
        }
        problem.eval_into(t + h, &tmp, &mut k4)?;
        for i in 0..d {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    Ok(y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkPrecisionOptions {
    pub problem: String,
    pub params: BTreeMap<String, f64>,
    pub seed: u64,
    pub tols: Vec<f64>,
    pub solvers: Vec<String>,
    pub order: usize,
    /// RK4 steps for the reference; the reference is also computed at half this
    /// resolution and the difference reported as its error estimate.
    pub reference_steps: usize,
    pub parallel: bool,
}

impl Default for WorkPrecisionOptions {
    fn default() -> Self {
        Self {
            problem: "pleiades".into(),
            params: BTreeMap::new(),
            seed: 0,
            tols: vec![1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9],
            solvers: vec!["ek1-diag".into(), "ek0-blockdiag".into()],
            order: 3,
            reference_steps: 2_000_000,
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkPrecisionRow {
    pub solver: String,
    pub rtol: f64,
    pub rmse_final: f64,
    pub wall_seconds: f64,
    pub n_steps: usize,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceInfo {
    pub problem: String,
    pub method: String,
    pub n_steps: usize,
    /// Max-norm difference to the same method at half the steps.
    pub error_estimate: f64,
    pub y_final: Vec<f64>,
}

pub fn rmse(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len().max(1) as f64).sqrt()
}

/// Final-state accuracy against a tight RK4 reference, across tolerances (`atol = rtol`).
pub fn work_precision(
    opts: &WorkPrecisionOptions,
) -> Result<(Vec<WorkPrecisionRow>, ReferenceInfo)> {
    if opts.tols.is_empty() {
        return Err(Error::InvalidArgument("no tolerances given".into()));
    }
    if opts.tols.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(Error::InvalidArgument("tolerances must be positive".into()));
    }
    if opts.tols.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument(
            "tolerances must be strictly descending".into(),
        ));
    }
    check_solvers(&opts.solvers)?;
    let problem = build_problem(&opts.problem, &opts.params, opts.seed)?;
    let y_ref = rk4_final(&problem, opts.reference_steps)?;
    let coarse = rk4_final(&problem, (opts.reference_steps / 2).max(1))?;
    let reference = ReferenceInfo {
        problem: problem.name.clone(),
        method: "rk4-fixed-step".into(),
        n_steps: opts.reference_steps,
        error_estimate: y_ref
            .iter()
            .zip(&coarse)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max),
        y_final: y_ref.clone(),
    };
    let mut jobs = Vec::new();
    for s in &opts.solvers {
        let base = SolverConfig::variant(s, opts.order)?;
        for &tol in &opts.tols {
            let cfg = base.clone().with_tolerances(tol, tol);
            cfg.validate()?;
            jobs.push((s.clone(), tol, cfg));
        }
    }
    let rows = map_configs(&jobs, opts.parallel, |(name, tol, cfg)| {
        let outcome = solve_partial(&problem, cfg);
        match outcome {
            Ok(sol) if sol.completed() => WorkPrecisionRow {
                solver: name.clone(),
                rtol: *tol,
                rmse_final: rmse(&sol.final_mean(), &y_ref),
                wall_seconds: sol.stats.wall_seconds,
                n_steps: sol.stats.n_accepted,
                failed: false,
            },
            other => {
                let (secs, steps) = other
                    .as_ref()
                    .map(|s| (s.stats.wall_seconds, s.stats.n_accepted))
                    .unwrap_or((f64::NAN, 0));
                log::warn!("{name} at rtol {tol} failed");
                WorkPrecisionRow {
                    solver: name.clone(),
                    rtol: *tol,
                    rmse_final: f64::NAN,
                    wall_seconds: secs,
                    n_steps: steps,
                    failed: true,
                }
            }
        }
    })?;
    Ok((rows, reference))
}

/// Writes the table to `output` and the reference description to `output` + `.meta.json`.
pub fn run_work_precision(
    opts: &WorkPrecisionOptions,
    output: &Path,
) -> Result<Vec<WorkPrecisionRow>> {
    let (rows, reference) = work_precision(opts)?;
    write_csv(&rows, output)?;
    let mut meta = output.as_os_str().to_owned();
    meta.push(".meta.json");
    let f = BufWriter::new(File::create(meta)?);
    serde_json::to_writer_pretty(f, &reference)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StiffnessOptions {
    pub mus: Vec<f64>,
    pub solvers: Vec<String>,
    pub order: usize,
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    pub parallel: bool,
}

impl Default for StiffnessOptions {
    fn default() -> Self {
        Self {
            mus: vec![1e-1, 1e0, 1e1, 1e2, 1e3],
            solvers: vec![
                "ek0-blockdiag".into(),
                "ek1-diag".into(),
                "ek1-dense".into(),
            ],
            order: 4,
            rtol: 1e-6,
            atol: 1e-6,
            max_steps: 1_000_000,
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StiffnessRow {
    pub solver: String,
    pub mu: f64,
    pub n_accepted: usize,
    pub n_rejected: usize,
    pub completed: bool,
}

/// Step counts on Van der Pol for each (solver, μ). Duplicate μ values run once.
pub fn stiffness(opts: &StiffnessOptions) -> Result<Vec<StiffnessRow>> {
    if opts.mus.is_empty() || opts.mus.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
        return Err(Error::InvalidArgument(
            "mus must be a non-empty list of positive numbers".into(),
        ));
    }
    check_solvers(&opts.solvers)?;
    let mut seen = BTreeSet::new();
    let mus: Vec<f64> = opts
        .mus
        .iter()
        .copied()
        .filter(|m| seen.insert(m.to_bits()))
        .collect();
    let mut jobs = Vec::new();
    for s in &opts.solvers {
        let mut cfg = SolverConfig::variant(s, opts.order)?.with_tolerances(opts.rtol, opts.atol);
        cfg.max_steps = opts.max_steps;
        cfg.save_every = 0;
        cfg.validate()?;
        for &mu in &mus {
            jobs.push((s.clone(), mu, cfg.clone()));
        }
    }
    map_configs(&jobs, opts.parallel, |(name, mu, cfg)| {
        let sol = vanderpol(*mu).and_then(|p| solve_partial(&p, cfg));
        match sol {
            Ok(sol) => StiffnessRow {
                solver: name.clone(),
                mu: *mu,
                n_accepted: sol.stats.n_accepted,
                n_rejected: sol.stats.n_rejected,
                completed: sol.completed(),
            },
            Err(e) => {
                log::warn!("{name} at mu {mu}: {e}");
                StiffnessRow {
                    solver: name.clone(),
                    mu: *mu,
                    n_accepted: 0,
                    n_rejected: 0,
                    completed: false,
                }
            }
        }
    })
}

pub fn run_stiffness(opts: &StiffnessOptions, output: &Path) -> Result<Vec<StiffnessRow>> {
    let rows = stiffness(opts)?;
    write_csv(&rows, output)?;
    Ok(rows)
}
