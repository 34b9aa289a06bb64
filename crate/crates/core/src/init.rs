//! Initialization of all `ν + 1` derivatives at `t₀` by Gaussian inference.
//!
//! A fixed-step Runge–Kutta integrator produces `ŷ(τₘ)` on `ν + 1` points
//! around `t₀` (offsets `m − ⌊ν/2⌋` times `dt`). Values `ŷ(τₘ)` and slopes
//! `f(ŷ(τₘ))` are conditioned on exactly under the integrated Wiener prior,
//! with a diffuse prior on the unknown higher derivatives at `t₀`. The
//! posterior at `t₀` is obtained from one whitened least-squares problem,
//! which is the dense conditioning of the small chain written in
//! information form.
//!
//! Data are centred on the Taylor line `y₀ + (t − t₀) f(y₀)`, which the prior
//! propagates exactly, so the unknowns carry only the curvature.
//!
//! The design matrix is shared by all dimensions, so the covariance is one
//! `(ν+1) × (ν+1)` factor, packed into the requested layout.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::calibrate::GammaBreve;
use crate::error::{Error, Result};
use crate::prior::{discretize, IwpPrior};
use crate::problems::OdeProblem;
use crate::stepper::{GaussianState, Structure};
use crate::structmat::{
    gram_sqrt_of_stack, triangularize, upper_factor, BlockDiagonal, KronLeft, StructuredMatrix,
};

/// Settings for [`initialize`].
#[derive(Debug, Clone, PartialEq)]
pub struct InitPlan {
    /// Always `ν + 1`.
    pub n_points: usize,
    /// Grid spacing.
    pub dt: f64,
    /// Order of the bootstrap integrator: 1, 2 or 4.
    pub rk_order: usize,
    /// Prior variance of the unknown derivatives before conditioning.
    pub c0_scale: f64,
    /// Integrator substeps per grid interval.
    pub substeps: usize,
}

impl InitPlan {
    /// Default spacing `1e-4 · span`, clipped to `[lower(ν), 1e-2]`, then capped at
    /// `0.1 ‖y₀‖ / ‖f(y₀)‖` so the bootstrap stays inside its stability region.
    pub fn for_problem(problem: &OdeProblem, nu: usize) -> Result<Self> {
        let span = problem.tmax - problem.t0;
        let lower = match nu {
            0..=3 => 1e-8,
            4 => 1e-3,
            _ => 1e-2,
        };
        let mut dt = (1e-4 * span).clamp(lower, 1e-2);
        let f0 = problem.eval(problem.t0, &problem.y0)?;
        let (ny, nf) = (norm(&problem.y0), norm(&f0));
        if ny > 0.0 && nf > 0.0 {
            dt = dt.min(0.1 * ny / nf);
        }
        Ok(Self {
            n_points: nu + 1,
            dt,
            rk_order: 4,
            c0_scale: 1e6,
            substeps: 4,
        })
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Stages `(c, a)` and weights `b` of an explicit method.
type Tableau = (Vec<(f64, Vec<f64>)>, Vec<f64>);

fn tableau(order: usize) -> Result<Tableau> {
    Ok(match order {
        1 => (vec![(0.0, vec![])], vec![1.0]),
        2 => (vec![(0.0, vec![]), (1.0, vec![1.0])], vec![0.5, 0.5]),
        4 => (
            vec![
                (0.0, vec![]),
                (0.5, vec![0.5]),
                (0.5, vec![0.0, 0.5]),
                (1.0, vec![0.0, 0.0, 1.0]),
            ],
            vec![1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
        ),
        other => {
            return Err(Error::InvalidArgument(format!(
                "unsupported bootstrap order {other}"
            )))
        }
    })
}

/// Integrates `n` steps of size `h` from `(t0, y0)` and returns the displacement `y − y0`
/// after every step. Displacements are accumulated from increments to avoid cancellation.
fn bootstrap(
    problem: &OdeProblem,
    order: usize,
    h: f64,
    n: usize,
    substeps: usize,
) -> Result<Vec<Vec<f64>>> {
    let (stages, weights) = tableau(order)?;
    let d = problem.dim();
    let sub = h / substeps as f64;
    let mut delta = vec![0.0; d];
    let mut t = problem.t0;
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; d]; stages.len()];
    let mut y = vec![0.0; d];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        for _ in 0..substeps {
            for (s, (c, a)) in stages.iter().enumerate() {
                for i in 0..d {
                    let mut acc = delta[i];
                    for (j, aj) in a.iter().enumerate() {
                        acc += sub * aj * k[j][i];
                    }
                    y[i] = problem.y0[i] + acc;
                }
                problem
                    .eval_into(t + c * sub, &y, &mut k[s])
                    .map_err(|_| Error::NonFinite {
                        what: format!("initialization bootstrap at t = {}", t + c * sub),
                    })?;
            }
            for i in 0..d {
                let inc: f64 = weights.iter().zip(&k).map(|(w, ks)| w * ks[i]).sum();
                delta[i] += sub * inc;
            }
            t += sub;
        }
        if delta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("initialization bootstrap at t = {t}"),
            });
        }
        out.push(delta.clone());
    }
    Ok(out)
}

/// Gaussian posterior over `(y, y', …, y^(ν))` at `t₀`, in the requested layout.
pub fn initialize(
    problem: &OdeProblem,
    prior: &IwpPrior,
    plan: &InitPlan,
    structure: Structure,
) -> Result<GaussianState> {
    let nu = prior.nu();
    let r = nu + 1;
    let d = problem.dim();
    if prior.dim() != d {
        return Err(Error::DimensionMismatch {
            context: "initialization prior",
            expected: d,
            found: prior.dim(),
        });
    }
    if !(plan.dt.is_finite() && plan.dt > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "initialization spacing must be positive, got {}",
            plan.dt
        )));
    }
    if plan.n_points != r {
        return Err(Error::InvalidArgument(format!(
            "initialization needs exactly {r} points, plan has {}",
            plan.n_points
        )));
    }
    if !(plan.c0_scale.is_finite() && plan.c0_scale > 0.0) || plan.substeps == 0 {
        return Err(Error::InvalidArgument(
            "initialization prior scale and substeps must be positive".into(),
        ));
    }
    let f0 = problem.eval(problem.t0, &problem.y0)?;
    let (cov_right, curvature) = if nu >= 2 {
        curvature_posterior(problem, prior, plan, &f0)?
    } else {
        (DMatrix::zeros(r, r), vec![])
    };

    let mut mean = vec![0.0; d * r];
    for i in 0..d {
        mean[i * r] = problem.y0[i];
        mean[i * r + 1] = f0[i];
        for q in 2..r {
            mean[i * r + q] = curvature[(q - 2) * d + i];
        }
    }
    let gamma = prior.diffusion().gamma_breve();
    let cov_sqrt = pack(structure, gamma, cov_right, d)?;
    GaussianState::new(problem.t0, nu, mean, cov_sqrt)
}

fn pack(
    structure: Structure,
    gamma: &GammaBreve,
    right: DMatrix<f64>,
    d: usize,
) -> Result<StructuredMatrix> {
    Ok(match structure {
        Structure::Kronecker => StructuredMatrix::Kronecker {
            left: Arc::clone(gamma.sqrt()),
            right,
        },
        Structure::BlockDiagonal => {
            if gamma.is_dense() {
                return Err(Error::Config(
                    "block-diagonal covariances need a diagonal left factor".into(),
                ));
            }
            let blocks: Vec<DMatrix<f64>> = (0..d).map(|i| &right * gamma.sqrt().diag(i)).collect();
            StructuredMatrix::BlockDiagonal(BlockDiagonal::from_blocks(&blocks)?)
        }
        Structure::Dense => StructuredMatrix::Dense(match gamma.sqrt().as_ref() {
            KronLeft::Identity(_) => DMatrix::identity(d, d).kronecker(&right),
            other => other.to_dense().kronecker(&right),
        }),
    })
}

/// Posterior square root (`r × r`, rows 0 and 1 zero) and the mean of derivatives
/// `2..=ν` at `t₀`, stored derivative-major (`(q − 2)·d + i`).
fn curvature_posterior(
    problem: &OdeProblem,
    prior: &IwpPrior,
    plan: &InitPlan,
    f0: &[f64],
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let nu = prior.nu();
    let r = nu + 1;
    let d = problem.dim();
    let dt = plan.dt;
    let centre = nu / 2;
    let offsets: Vec<i64> = (0..r as i64).map(|m| m - centre as i64).collect();

    // Displacements and slope changes on the grid.
    let forward = bootstrap(problem, plan.rk_order, dt, nu - centre, plan.substeps)?;
    let backward = if centre > 0 {
        bootstrap_backward(problem, plan, centre)?
    } else {
        vec![]
    };
    let mut disp: Vec<Vec<f64>> = Vec::with_capacity(r);
    for m in (0..centre).rev() {
        disp.push(backward[m].clone());
    }
    disp.push(vec![0.0; d]);
    disp.extend(forward);

    let tm = discretize(prior, dt)?;
    let scale: Vec<f64> = (0..r).map(|q| tm.scale(q)).collect();
    // Known scaled coordinates 0 and 1 at every node, per dimension.
    let mut known0 = vec![0.0; r * d];
    let mut known1 = vec![0.0; r * d];
    for (m, off) in offsets.iter().enumerate() {
        let tau = *off as f64 * dt;
        let y: Vec<f64> = problem
            .y0
            .iter()
            .zip(&disp[m])
            .map(|(a, b)| a + b)
            .collect();
        let slope = if *off == 0 {
            f0.to_vec()
        } else {
            problem
                .eval(problem.t0 + tau, &y)
                .map_err(|_| Error::NonFinite {
                    what: format!("initialization slope at t = {}", problem.t0 + tau),
                })?
        };
        for i in 0..d {
            known0[m * d + i] = (disp[m][i] - tau * f0[i]) / scale[0];
            known1[m * d + i] = (slope[i] - f0[i]) / scale[1];
        }
    }

    // Unknowns: scaled coordinates 2..=ν at every node.
    let per = nu - 1;
    let n_unk = r * per;
    let unk = |m: usize, q: usize| m * per + (q - 2);
    let l_inv = prior
        .sigma_sqrt_scaled()
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidArgument("prior noise factor is singular".into()))?;
    let phi = prior.phi_scaled();
    let n_rows = nu * r + per;
    // Column-major [A | B] with d right-hand sides.
    let cols = n_unk + d;
    let mut buf = vec![0.0; n_rows * cols];
    let at = |row: usize, col: usize| col * n_rows + row;
    for m in 0..nu {
        // Residual L⁻¹ (u_{m+1} − Φ̃ u_m) = A x − b row by row.
        // Coefficient of u_{m+1}[q] is L⁻¹[:, q]; of u_m[j] is −(L⁻¹ Φ̃)[:, j].
        let lphi = &l_inv * phi;
        for p in 0..r {
            let row = m * r + p;
            for q in 2..r {
                buf[at(row, unk(m + 1, q))] += l_inv[(p, q)];
                buf[at(row, unk(m, q))] -= lphi[(p, q)];
            }
            for i in 0..d {
                let known = l_inv[(p, 0)] * known0[(m + 1) * d + i]
                    + l_inv[(p, 1)] * known1[(m + 1) * d + i]
                    - lphi[(p, 0)] * known0[m * d + i]
                    - lphi[(p, 1)] * known1[m * d + i];
                buf[at(row, n_unk + i)] = -known;
            }
        }
    }
    let sqrt_c0 = plan.c0_scale.sqrt();
    for q in 2..r {
        let row = nu * r + (q - 2);
        buf[at(row, unk(centre, q))] = scale[q] / sqrt_c0;
    }
    let mut scratch = vec![0.0; n_rows];
    triangularize(&mut buf, n_rows, cols, &mut scratch);
    let rfac = upper_factor(&buf, n_rows, n_unk);
    if (0..n_unk).any(|k| rfac[(k, k)] == 0.0 || !rfac[(k, k)].is_finite()) {
        return Err(Error::NonFinite {
            what: "initialization design matrix".into(),
        });
    }
    let r_inv = rfac
        .solve_upper_triangular(&DMatrix::identity(n_unk, n_unk))
        .ok_or_else(|| Error::InvalidArgument("initialization design is rank deficient".into()))?;

    let mut curvature = vec![0.0; per * d];
    let mut rhs = DMatrix::zeros(n_unk, d);
    for i in 0..d {
        for k in 0..n_unk {
            rhs[(k, i)] = buf[at(k, n_unk + i)];
        }
    }
    let sol = &r_inv * rhs;
    for q in 2..r {
        for i in 0..d {
            curvature[(q - 2) * d + i] = scale[q] * sol[(unk(centre, q), i)];
        }
    }

    // Covariance of the t₀ unknowns: rows of R⁻¹.
    let rows: Vec<usize> = (2..r).map(|q| unk(centre, q)).collect();
    let sub = DMatrix::from_fn(per, n_unk, |a, b| r_inv[(rows[a], b)]);
    let tri = gram_sqrt_of_stack(&sub.transpose(), &DMatrix::zeros(0, per))?;
    let small = tri.transpose();
    let mut right = DMatrix::zeros(r, r);
    for a in 0..per {
        for b in 0..per {
            right[(a + 2, b + 2)] = scale[a + 2] * small[(a, b)];
        }
    }
    Ok((right, curvature))
}

fn bootstrap_backward(problem: &OdeProblem, plan: &InitPlan, n: usize) -> Result<Vec<Vec<f64>>> {
    // Integrating backwards in time is forward integration of the reflected field.
    let p = problem.clone();
    let t0 = p.t0;
    let reflected = OdeProblem::new(
        format!("{}-reflected", p.name),
        p.y0.clone(),
        (t0, t0 + 1.0),
        move |s, y, out| {
            // s runs forward from t0; real time is 2t0 − s.
            if p.eval_into(2.0 * t0 - s, y, out).is_err() {
                out.iter_mut().for_each(|v| *v = f64::NAN);
            }
            out.iter_mut().for_each(|v| *v = -*v);
        },
    )?;
    bootstrap(&reflected, plan.rk_order, plan.dt, n, plan.substeps)
}
