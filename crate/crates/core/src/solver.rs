//! Solver configuration and the time-stepping loop.

use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use crate::adapt::{error_norm, propose, StepController};
use crate::calibrate::{
    rescale_cov_sqrt, CalibrationAccumulator, DiffusionSpec, GammaBreve, GammaSq, Shape,
    Variability,
};
use crate::error::{Error, Result};
use crate::init::{initialize, InitPlan};
use crate::linearize::LinearizationStrategy;
use crate::prior::IwpPrior;
use crate::problems::OdeProblem;
use crate::stepper::{step_with_prior, CorrectionForm, GaussianState, Structure};

/// Where the solver places its steps.
#[derive(Debug, Clone, PartialEq)]
pub enum TimeGrid {
    Adaptive,
    /// Exactly these times; the first must equal `t0`.
    Fixed(Vec<f64>),
    /// `n` equal steps across the problem's span.
    FixedSteps(usize),
}

/// Initialization overrides; `None` fields use [`InitPlan::for_problem`].
#[derive(Debug, Clone, PartialEq)]
pub struct InitOptions {
    pub dt: Option<f64>,
    pub rk_order: usize,
    pub c0_scale: f64,
    pub substeps: usize,
}

impl Default for InitOptions {
    fn default() -> Self {
        Self {
            dt: None,
            rk_order: 4,
            c0_scale: 1e6,
            substeps: 4,
        }
    }
}

/// The five named solver variants exposed on the command line.
pub const VARIANTS: [&str; 5] = [
    "ek0-dense",
    "ek1-dense",
    "ek0-blockdiag",
    "ek1-diag",
    "ek0-kronecker",
];

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub order: usize,
    pub strategy: LinearizationStrategy,
    pub structure: Structure,
    pub variability: Variability,
    pub shape: Shape,
    /// `Γ̆`; identity of the problem's dimension when `None`.
    pub gamma_breve: Option<Arc<GammaBreve>>,
    pub rtol: f64,
    pub atol: f64,
    pub grid: TimeGrid,
    pub h0: Option<f64>,
    pub h_min: Option<f64>,
    pub h_max: Option<f64>,
    /// Limit on accepted steps, and separately on rejected steps.
    pub max_steps: usize,
    pub init: InitOptions,
    pub correction: CorrectionForm,
    /// Record every k-th accepted step (the first and last are always recorded); 0 keeps only those two.
    pub save_every: usize,
}

impl SolverConfig {
    pub fn new(order: usize, strategy: LinearizationStrategy, structure: Structure) -> Self {
        Self {
            order,
            strategy,
            structure,
            variability: Variability::TimeVarying,
            shape: Shape::Scalar,
            gamma_breve: None,
            rtol: 1e-6,
            atol: 1e-6,
            grid: TimeGrid::Adaptive,
            h0: None,
            h_min: None,
            h_max: None,
            max_steps: 10_000_000,
            init: InitOptions::default(),
            correction: CorrectionForm::Joseph,
            save_every: 1,
        }
    }

    /// Builds one of [`VARIANTS`].
    pub fn variant(name: &str, order: usize) -> Result<Self> {
        use LinearizationStrategy::*;
        let (strategy, structure) = match name {
            "ek0-dense" => (Ek0, Structure::Dense),
            "ek1-dense" => (DenseEk1, Structure::Dense),
            "ek0-blockdiag" => (Ek0, Structure::BlockDiagonal),
            "ek1-diag" => (DiagonalEk1, Structure::BlockDiagonal),
            "ek0-kronecker" => (Ek0, Structure::Kronecker),
            other => {
                return Err(Error::Config(format!(
                    "unknown solver '{other}', expected one of {VARIANTS:?}"
                )))
            }
        };
        Ok(Self::new(order, strategy, structure))
    }

    pub fn variant_name(&self) -> String {
        use LinearizationStrategy::*;
        match (self.strategy, self.structure) {
            (Ek0, Structure::Dense) => "ek0-dense".into(),
            (DenseEk1, Structure::Dense) => "ek1-dense".into(),
            (DiagonalEk1, Structure::Dense) => "ek1-diag-dense".into(),
            (Ek0, Structure::BlockDiagonal) => "ek0-blockdiag".into(),
            (DiagonalEk1, Structure::BlockDiagonal) => "ek1-diag".into(),
            (Ek0, Structure::Kronecker) => "ek0-kronecker".into(),
            (s, st) => format!("{s:?}-{}", st.name()),
        }
    }

    pub fn with_diffusion(mut self, name: &str) -> Result<Self> {
        let spec = DiffusionSpec::parse(name, 1)?;
        self.variability = spec.variability;
        self.shape = spec.shape;
        Ok(self)
    }

    pub fn with_tolerances(mut self, rtol: f64, atol: f64) -> Self {
        self.rtol = rtol;
        self.atol = atol;
        self
    }

    pub fn with_grid(mut self, grid: TimeGrid) -> Self {
        self.grid = grid;
        self
    }

    pub fn diffusion_name(&self) -> &'static str {
        match (self.variability, self.shape) {
            (Variability::TimeVarying, Shape::Scalar) => "tv-scalar",
            (Variability::TimeVarying, Shape::Vector) => "tv-vector",
            (Variability::TimeConstant, Shape::Scalar) => "tc-scalar",
            (Variability::TimeConstant, Shape::Vector) => "tc-vector",
        }
    }

    /// Checks the layout, linearization and diffusion combinations.
    pub fn validate(&self) -> Result<()> {
        use LinearizationStrategy::*;
        if self.order == 0 {
            return Err(Error::Config("order must be at least 1".into()));
        }
        let dense_gamma = self.gamma_breve.as_ref().is_some_and(|g| g.is_dense());
        match self.structure {
            Structure::Kronecker => {
                if self.strategy != Ek0 {
                    return Err(Error::Config(
                        "the Kronecker layout supports only the EK0".into(),
                    ));
                }
                if self.shape != Shape::Scalar {
                    return Err(Error::Config(
                        "the Kronecker layout supports only scalar diffusion".into(),
                    ));
                }
            }
            Structure::BlockDiagonal => {
                if self.strategy == DenseEk1 {
                    return Err(Error::Config(
                        "the block-diagonal layout needs a zero or diagonal Jacobian".into(),
                    ));
                }
                if dense_gamma {
                    return Err(Error::Config(
                        "the block-diagonal layout needs a diagonal left factor".into(),
                    ));
                }
            }
            Structure::Dense => {}
        }
        if self.shape == Shape::Vector && dense_gamma {
            return Err(Error::Config(
                "vector diffusion requires a diagonal left factor".into(),
            ));
        }
        if self.correction == CorrectionForm::Conventional && self.structure != Structure::Dense {
            return Err(Error::Config(
                "the conventional correction is implemented for the dense layout only".into(),
            ));
        }
        if self.grid == TimeGrid::Adaptive {
            StepController::new(self.order, self.rtol, self.atol).validate()?;
        }
        if let TimeGrid::FixedSteps(0) = self.grid {
            return Err(Error::Config("a fixed grid needs at least one step".into()));
        }
        Ok(())
    }

    pub fn diffusion(&self, d: usize) -> Result<DiffusionSpec> {
        let gamma = match &self.gamma_breve {
            Some(g) if g.dim() != d => {
                return Err(Error::DimensionMismatch {
                    context: "diffusion left factor",
                    expected: d,
                    found: g.dim(),
                })
            }
            Some(g) => GammaBreve::clone(g),
            None => GammaBreve::identity(d),
        };
        DiffusionSpec::new(self.variability, self.shape, gamma)
    }

    pub fn prior(&self, d: usize) -> Result<IwpPrior> {
        IwpPrior::new(self.order, d, self.diffusion(d)?)
    }

    pub fn init_plan(&self, problem: &OdeProblem) -> Result<InitPlan> {
        let mut plan = InitPlan::for_problem(problem, self.order)?;
        if let Some(dt) = self.init.dt {
            plan.dt = dt;
        }
        plan.rk_order = self.init.rk_order;
        plan.c0_scale = self.init.c0_scale;
        plan.substeps = self.init.substeps;
        Ok(plan)
    }

    fn controller(&self, problem: &OdeProblem) -> StepController {
        let span = problem.tmax - problem.t0;
        let h_min = self.h_min.unwrap_or(1e-12 * span.max(1.0));
        let h_max = self.h_max.unwrap_or(span);
        StepController::new(self.order, self.rtol, self.atol).with_step_bounds(h_min, h_max)
    }
}

/// One saved point of the solution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolutionRecord {
    pub t: f64,
    pub y_mean: Vec<f64>,
    pub y_std: Vec<f64>,
    pub gamma: Vec<f64>,
    pub h: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SolveStats {
    pub n_accepted: usize,
    pub n_rejected: usize,
    /// Rejections caused by a numerically failed step rather than the error estimate.
    pub n_failed: usize,
    pub wall_seconds: f64,
    pub init_dt: f64,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub records: Vec<SolutionRecord>,
    pub final_state: GaussianState,
    pub stats: SolveStats,
    /// Time-constant estimate applied after the solve.
    pub posthoc_gamma: Option<GammaSq>,
    /// Why the solve stopped early, if it did. Records up to that point are kept.
    pub failure: Option<Error>,
}

impl Solution {
    pub fn completed(&self) -> bool {
        self.failure.is_none()
    }

    pub fn final_mean(&self) -> Vec<f64> {
        self.final_state.coord(0)
    }
}

fn recoverable(e: &Error) -> bool {
    matches!(
        e.root(),
        Error::SingularInnovation { .. } | Error::NonFinite { .. } | Error::NonFiniteField { .. }
    )
}

fn record(state: &GaussianState, gamma: &GammaSq, h: f64) -> SolutionRecord {
    SolutionRecord {
        t: state.t,
        y_mean: state.coord(0),
        y_std: state.y_std(),
        gamma: gamma.as_vec(),
        h,
        accepted: true,
    }
}

fn fixed_times(problem: &OdeProblem, grid: &TimeGrid) -> Result<Option<Vec<f64>>> {
    match grid {
        TimeGrid::Adaptive => Ok(None),
        TimeGrid::FixedSteps(n) => {
            let span = problem.tmax - problem.t0;
            let mut ts: Vec<f64> = (0..=*n)
                .map(|k| problem.t0 + span * k as f64 / *n as f64)
                .collect();
            ts[*n] = problem.tmax;
            Ok(Some(ts))
        }
        TimeGrid::Fixed(ts) => {
            if ts.len() < 2
                || ts[0] != problem.t0
                || ts
                    .windows(2)
                    .any(|w| w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Greater))
            {
                return Err(Error::Config(
                    "a fixed grid must start at t0 and increase strictly".into(),
                ));
            }
            Ok(Some(ts.clone()))
        }
    }
}

/// Runs a full solve. Failures during stepping are returned in [`Solution::failure`].
pub fn solve_partial(problem: &OdeProblem, cfg: &SolverConfig) -> Result<Solution> {
    cfg.validate()?;
    let start = Instant::now();
    let d = problem.dim();
    let prior = cfg.prior(d)?;
    let plan = cfg.init_plan(problem)?;
    let mut state =
        initialize(problem, &prior, &plan, cfg.structure).map_err(|e| e.in_phase("initialize"))?;
    let times = fixed_times(problem, &cfg.grid)?;
    let ctrl = cfg.controller(problem);
    let time_constant = cfg.variability == Variability::TimeConstant;
    let mut acc = CalibrationAccumulator::for_shape(cfg.shape, d);

    let unit = match cfg.shape {
        Shape::Scalar => GammaSq::Scalar(1.0),
        Shape::Vector => GammaSq::Vector(vec![1.0; d]),
    };
    let mut records = vec![record(&state, &unit, 0.0)];
    let mut stats = SolveStats {
        init_dt: plan.dt,
        ..Default::default()
    };
    let mut pending: Option<SolutionRecord> = None;
    let mut failure = None;

    let accept = |state: &mut GaussianState,
                  next: GaussianState,
                  gamma: &GammaSq,
                  h: f64,
                  stats: &mut SolveStats,
                  pending: &mut Option<SolutionRecord>,
                  records: &mut Vec<SolutionRecord>| {
        *state = next;
        stats.n_accepted += 1;
        let rec = record(state, gamma, h);
        if cfg.save_every > 0 && stats.n_accepted.is_multiple_of(cfg.save_every) {
            records.push(rec);
            *pending = None;
        } else {
            *pending = Some(rec);
        }
    };

    if let Some(ts) = times {
        for w in ts.windows(2) {
            let h = w[1] - w[0];
            match step_with_prior(&state, h, cfg, &prior, problem) {
                Ok(mut out) => {
                    out.state.t = w[1];
                    if time_constant {
                        if let Err(e) = out
                            .measurement
                            .time_constant_ratio(cfg.shape)
                            .and_then(|g| acc.push(&g))
                        {
                            failure = Some(e);
                            break;
                        }
                    }
                    accept(
                        &mut state,
                        out.state,
                        &out.gamma_hat,
                        h,
                        &mut stats,
                        &mut pending,
                        &mut records,
                    );
                }
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            }
        }
    } else {
        let mut h = cfg
            .h0
            .unwrap_or(0.01 * (problem.tmax - problem.t0))
            .min(ctrl.h_max);
        let mut prev_norm = 1.0_f64;
        while state.t < problem.tmax {
            if stats.n_accepted >= cfg.max_steps || stats.n_rejected >= cfg.max_steps {
                failure = Some(Error::MaxStepsExceeded(cfg.max_steps));
                break;
            }
            let remaining = problem.tmax - state.t;
            let mut h_try = h.min(remaining);
            let last = remaining - h_try <= ctrl.h_min.max(1e-12 * remaining);
            if last {
                h_try = remaining;
            }
            let outcome = step_with_prior(&state, h_try, cfg, &prior, problem);
            let (norm, out) = match outcome {
                Ok(out) => {
                    // The estimate is a defect on the derivative; one step carries it into the solution.
                    let err: Vec<f64> = out.error_estimate.iter().map(|e| e * h_try).collect();
                    let norm = error_norm(&err, &state.coord(0), &out.state.coord(0), &ctrl);
                    (norm, Some(out))
                }
                Err(e) if recoverable(&e) => {
                    log::debug!("step at t = {} failed, shrinking: {e}", state.t);
                    stats.n_failed += 1;
                    (f64::INFINITY, None)
                }
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            };
            let norm = if norm.is_finite() {
                norm
            } else {
                f64::INFINITY
            };
            let proposal = match propose(h_try, norm, prev_norm, &ctrl, state.t) {
                Ok(p) => p,
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            };
            match out {
                Some(mut out) if proposal.accept => {
                    if last {
                        out.state.t = problem.tmax;
                    }
                    if time_constant {
                        if let Err(e) = out
                            .measurement
                            .time_constant_ratio(cfg.shape)
                            .and_then(|g| acc.push(&g))
                        {
                            failure = Some(e);
                            break;
                        }
                    }
                    accept(
                        &mut state,
                        out.state,
                        &out.gamma_hat,
                        h_try,
                        &mut stats,
                        &mut pending,
                        &mut records,
                    );
                    prev_norm = norm.max(1e-4);
                }
                _ => stats.n_rejected += 1,
            }
            h = proposal.h_next;
        }
    }
    if let Some(rec) = pending {
        records.push(rec);
    }

    let mut posthoc_gamma = None;
    if time_constant && acc.count() > 0 {
        let g = acc.finalize()?;
        let floored = g.floored();
        state.cov_sqrt = rescale_cov_sqrt(&state.cov_sqrt, state.block(), &floored)?;
        for rec in &mut records {
            for (i, s) in rec.y_std.iter_mut().enumerate() {
                *s *= floored.get(i).sqrt();
            }
            rec.gamma = g.as_vec();
        }
        posthoc_gamma = Some(g);
    }
    stats.wall_seconds = start.elapsed().as_secs_f64();
    Ok(Solution {
        records,
        final_state: state,
        stats,
        posthoc_gamma,
        failure,
    })
}

/// Runs a full solve and turns an early stop into an error.
pub fn solve(problem: &OdeProblem, cfg: &SolverConfig) -> Result<Solution> {
    let mut sol = solve_partial(problem, cfg)?;
    match sol.failure.take() {
        Some(e) => Err(e),
        None => Ok(sol),
    }
}
