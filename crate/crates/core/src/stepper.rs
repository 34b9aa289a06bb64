//! One filter step in square-root form for the three covariance layouts.
//!
//! Phase order inside [`step`]: discretize, predict mean, linearize, calibrate,
//! predict covariance, measure, correct. Calibration needs only `H Σ(h) Hᵀ`,
//! so the diffusion estimate is available before the covariance is predicted.
//!
//! Covariance prediction runs in Nordsieck-scaled coordinates; the state itself
//! is always stored in original coordinates.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::calibrate::{
    calibrate_local_kronecker, calibrate_local_scalar, calibrate_local_vector, GammaBreve, GammaSq,
    Shape, Variability,
};
use crate::error::{Error, Result};
use crate::linearize::{linearize_at, Linearization};
use crate::prior::{discretize, IwpPrior, TransitionModel};
use crate::problems::OdeProblem;
use crate::solver::SolverConfig;
use crate::structmat::{
    gram_sqrt_of_stack, BlockDiagonal, KronLeft, StackWorkspace, StructuredMatrix,
};

/// Covariance layout used for an entire solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Structure {
    Dense,
    BlockDiagonal,
    Kronecker,
}

impl Structure {
    pub fn of(m: &StructuredMatrix) -> Self {
        match m {
            StructuredMatrix::Kronecker { .. } => Structure::Kronecker,
            StructuredMatrix::BlockDiagonal(_) => Structure::BlockDiagonal,
            StructuredMatrix::Dense(_) => Structure::Dense,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Structure::Dense => "dense",
            Structure::BlockDiagonal => "block-diagonal",
            Structure::Kronecker => "kronecker",
        }
    }
}

/// How the dense reference corrects its square root.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorrectionForm {
    /// `√C = (I − KH)√C⁻`.
    #[default]
    Joseph,
    /// Triangularize `[√C⁻ᵀHᵀ, √C⁻ᵀ]`. Dense layout only.
    Conventional,
}

/// Filter state at one time point.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    pub t: f64,
    pub nu: usize,
    /// Row-major `d × (ν+1)`: entry `i·(ν+1) + q` is derivative `q` of dimension `i`.
    pub mean: Vec<f64>,
    pub cov_sqrt: StructuredMatrix,
}

impl GaussianState {
    pub fn new(t: f64, nu: usize, mean: Vec<f64>, cov_sqrt: StructuredMatrix) -> Result<Self> {
        let r = nu + 1;
        if !mean.len().is_multiple_of(r) || mean.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "mean length {} is not a positive multiple of {r}",
                mean.len()
            )));
        }
        if cov_sqrt.dim() != mean.len() {
            return Err(Error::DimensionMismatch {
                context: "state covariance",
                expected: mean.len(),
                found: cov_sqrt.dim(),
            });
        }
        if let StructuredMatrix::BlockDiagonal(b) = &cov_sqrt {
            if b.block_size() != r {
                return Err(Error::RaggedBlock {
                    index: 0,
                    detail: format!("block size {} does not match order {nu}", b.block_size()),
                });
            }
        }
        if let StructuredMatrix::Kronecker { right, .. } = &cov_sqrt {
            if right.nrows() != r {
                return Err(Error::DimensionMismatch {
                    context: "Kronecker right factor",
                    expected: r,
                    found: right.nrows(),
                });
            }
        }
        Ok(Self {
            t,
            nu,
            mean,
            cov_sqrt,
        })
    }

    pub fn block(&self) -> usize {
        self.nu + 1
    }

    pub fn dim(&self) -> usize {
        self.mean.len() / self.block()
    }

    pub fn structure(&self) -> Structure {
        Structure::of(&self.cov_sqrt)
    }

    pub fn mean_at(&self, i: usize, q: usize) -> f64 {
        self.mean[i * self.block() + q]
    }

    /// Derivative `q` of every dimension.
    pub fn coord(&self, q: usize) -> Vec<f64> {
        self.mean
            .iter()
            .skip(q)
            .step_by(self.block())
            .copied()
            .collect()
    }

    /// Marginal standard deviations of derivative `q`.
    pub fn coord_std(&self, q: usize) -> Vec<f64> {
        let r = self.block();
        match &self.cov_sqrt {
            StructuredMatrix::Kronecker { left, right } => {
                let rn = right.row(q).norm();
                (0..self.dim())
                    .map(|i| left.row_norm_sq(i).sqrt() * rn)
                    .collect()
            }
            StructuredMatrix::BlockDiagonal(b) => (0..self.dim())
                .map(|i| {
                    let s = b.block_slice(i);
                    (0..r).map(|c| s[q + c * r].powi(2)).sum::<f64>().sqrt()
                })
                .collect(),
            StructuredMatrix::Dense(m) => {
                (0..self.dim()).map(|i| m.row(i * r + q).norm()).collect()
            }
        }
    }

    /// Marginal standard deviations of the solution values.
    pub fn y_std(&self) -> Vec<f64> {
        self.coord_std(0)
    }

    /// The same state with a dense covariance square root.
    pub fn densified(&self) -> GaussianState {
        GaussianState {
            cov_sqrt: self.cov_sqrt.densified(),
            ..self.clone()
        }
    }

    fn check_finite(&self, what: &str) -> Result<()> {
        if self.mean.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite {
                what: format!("{what} mean at t = {}", self.t),
            })
        }
    }
}

/// Innovation covariance `S = H C⁻ Hᵀ` in the layout's natural form.
#[derive(Debug, Clone, PartialEq)]
pub enum Innovation {
    Diagonal(Vec<f64>),
    /// `S = Γ̆ ⊗ scalar`.
    Kronecker {
        scalar: f64,
        gamma: Arc<GammaBreve>,
    },
    Dense(DMatrix<f64>),
}

impl Innovation {
    pub fn diag(&self) -> Vec<f64> {
        match self {
            Innovation::Diagonal(v) => v.clone(),
            Innovation::Kronecker { scalar, gamma } => (0..gamma.dim())
                .map(|i| gamma.matrix().diag(i) * scalar)
                .collect(),
            Innovation::Dense(m) => m.diagonal().as_slice().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum MeasureCache {
    /// `Hⁱ √C⁻ᵢ` per block, or the single right-factor row.
    Rows(Vec<f64>),
    /// `V = H √C⁻` (`d × n`).
    Dense(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub z: Vec<f64>,
    pub s: Innovation,
    /// `[H Σ(h) Hᵀ]ᵢᵢ` with unit diffusion.
    pub sigma_meas: Vec<f64>,
    pub(crate) cache: MeasureCache,
}

impl Measurement {
    /// Contribution of this step to a time-constant accumulator: the per-dimension
    /// `zᵢ² / Sᵢᵢ`, or `(1/d) zᵀ S⁻¹ z` for the scalar shape.
    pub fn time_constant_ratio(&self, shape: Shape) -> Result<GammaSq> {
        let d = self.z.len();
        Ok(match (shape, &self.s) {
            (Shape::Scalar, Innovation::Kronecker { scalar, gamma }) => {
                GammaSq::Scalar(calibrate_local_kronecker(&self.z, *scalar, gamma)?)
            }
            (Shape::Scalar, Innovation::Dense(s)) => {
                GammaSq::Scalar(inv_quad_spd(s, &self.z)? / d as f64)
            }
            (Shape::Scalar, s) => GammaSq::Scalar(calibrate_local_scalar(&self.z, &s.diag())?),
            (Shape::Vector, s) => GammaSq::Vector(calibrate_local_vector(&self.z, &s.diag())?),
        })
    }
}

/// Unit-diffusion measurement of the process noise, `H Σ(h) Hᵀ`.
#[derive(Debug, Clone)]
pub(crate) struct NoiseMeasurement {
    pub diag: Vec<f64>,
    /// Full matrix when it is not diagonal (dense layout with dense `Γ̆` or Jacobian).
    pub full: Option<DMatrix<f64>>,
    /// `e₁ Σ̆ e₁ᵀ` for the Kronecker layout.
    pub right: f64,
}

/// Everything a step produces besides the new state.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub state: GaussianState,
    /// Calibrated local-defect standard deviations.
    pub error_estimate: Vec<f64>,
    /// Local diffusion estimate (unfloored).
    pub gamma_hat: GammaSq,
    pub measurement: Measurement,
}

fn inv_quad_spd(s: &DMatrix<f64>, z: &[f64]) -> Result<f64> {
    let chol = s
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SingularInnovation {
            t: f64::NAN,
            index: 0,
            value: s.diagonal().min(),
        })?;
    let w = chol
        .l()
        .solve_lower_triangular(&DVector::from_column_slice(z))
        .ok_or(Error::SingularInnovation {
            t: f64::NAN,
            index: 0,
            value: 0.0,
        })?;
    Ok(w.norm_squared())
}

/// `m⁻ = (I ⊗ Φ̆) m`.
pub fn predict_mean(mean: &[f64], tm: &TransitionModel) -> Vec<f64> {
    let r = tm.phi.nrows();
    let mut out = vec![0.0; mean.len()];
    for (src, dst) in mean.chunks_exact(r).zip(out.chunks_exact_mut(r)) {
        for (q, slot) in dst.iter_mut().enumerate() {
            *slot = (q..r).map(|j| tm.phi[(q, j)] * src[j]).sum();
        }
    }
    out
}

/// Square root of `Φ C Φᵀ + g Σ` for a single `r × r` block, computed in scaled coordinates.
///
/// `c` and `out` are column-major. `scratch` holds two `r × r` buffers.
fn predict_block(
    c: &[f64],
    tm: &TransitionModel,
    sqrt_g: f64,
    ws: &mut StackWorkspace,
    scratch: &mut [f64],
    out: &mut [f64],
) {
    let r = tm.phi.nrows();
    let (top, bottom) = scratch.split_at_mut(r * r);
    let phi = &tm.phi_scaled;
    let l = &tm.sigma_sqrt_scaled;
    // top = (Φ̃ P⁻¹ C)ᵀ, so top[(c, q)] = Σ_j Φ̃[q, j] C[j, c] / P_j.
    for col in 0..r {
        for q in 0..r {
            let mut acc = 0.0;
            for j in q..r {
                acc += phi[(q, j)] * c[j + col * r] / tm.scale(j);
            }
            top[col + q * r] = acc;
        }
    }
    // bottom = √g L̃ᵀ.
    for q in 0..r {
        for p in 0..r {
            bottom[p + q * r] = sqrt_g * l[(q, p)];
        }
    }
    ws.stacked_sqrt_t(top, bottom, r, out);
    for q in 0..r {
        let s = tm.scale(q);
        for col in 0..r {
            out[q + col * r] *= s;
        }
    }
}

/// Predicts the covariance square root with process noise `diag(γ²) Γ̆ ⊗ Σ̆(h)`.
///
/// Kronecker layouts accept only a scalar `gamma_sq` and update only the right factor.
pub fn predict_cov(
    cov_sqrt: &StructuredMatrix,
    tm: &TransitionModel,
    gamma_breve: &GammaBreve,
    gamma_sq: &GammaSq,
) -> Result<StructuredMatrix> {
    let r = tm.phi.nrows();
    let mut ws = StackWorkspace::default();
    let mut scratch = vec![0.0; 2 * r * r];
    match cov_sqrt {
        StructuredMatrix::Kronecker { left, right } => {
            let GammaSq::Scalar(g) = gamma_sq else {
                return Err(Error::Config(
                    "Kronecker covariances admit only a scalar diffusion".into(),
                ));
            };
            let mut out = vec![0.0; r * r];
            predict_block(
                right.as_slice(),
                tm,
                g.sqrt(),
                &mut ws,
                &mut scratch,
                &mut out,
            );
            Ok(StructuredMatrix::Kronecker {
                left: Arc::clone(left),
                right: DMatrix::from_column_slice(r, r, &out),
            })
        }
        StructuredMatrix::BlockDiagonal(b) => {
            if gamma_breve.is_dense() {
                return Err(Error::Config(
                    "block-diagonal covariances need a diagonal left factor".into(),
                ));
            }
            let mut out = BlockDiagonal::zeros(r, b.count());
            for i in 0..b.count() {
                let g = gamma_sq.get(i) * gamma_breve.matrix().diag(i);
                predict_block(
                    b.block_slice(i),
                    tm,
                    g.sqrt(),
                    &mut ws,
                    &mut scratch,
                    out.block_slice_mut(i),
                );
            }
            Ok(StructuredMatrix::BlockDiagonal(out))
        }
        StructuredMatrix::Dense(c) => {
            let n = c.nrows();
            let d = n / r;
            // top = ((I ⊗ Φ̃) P⁻¹ √C)ᵀ
            let mut scaled = c.clone();
            for row in 0..n {
                scaled.row_mut(row).scale_mut(1.0 / tm.scale(row % r));
            }
            let mut mixed = DMatrix::zeros(n, n);
            for i in 0..d {
                let blk = tm.phi_scaled.clone() * scaled.rows(i * r, r);
                mixed.rows_mut(i * r, r).copy_from(&blk);
            }
            // bottom = (diag(γ) √Γ̆ ⊗ L̃)ᵀ
            let left = gamma_breve.sqrt().to_dense();
            let mut left_scaled = left;
            for i in 0..d {
                left_scaled.row_mut(i).scale_mut(gamma_sq.get(i).sqrt());
            }
            let noise = left_scaled.kronecker(&tm.sigma_sqrt_scaled);
            let rfac = gram_sqrt_of_stack(&mixed.transpose(), &noise.transpose())?;
            let mut out = rfac.transpose();
            for row in 0..n {
                out.row_mut(row).scale_mut(tm.scale(row % r));
            }
            Ok(StructuredMatrix::Dense(out))
        }
    }
}

/// Predicts mean and covariance.
pub fn predict(
    state: &GaussianState,
    tm: &TransitionModel,
    gamma_breve: &GammaBreve,
    gamma_sq: &GammaSq,
) -> Result<GaussianState> {
    if tm.phi.nrows() != state.block() {
        return Err(Error::DimensionMismatch {
            context: "transition order",
            expected: state.block(),
            found: tm.phi.nrows(),
        });
    }
    Ok(GaussianState {
        t: state.t + tm.step,
        nu: state.nu,
        mean: predict_mean(&state.mean, tm),
        cov_sqrt: predict_cov(&state.cov_sqrt, tm, gamma_breve, gamma_sq)?,
    })
}

/// `Hⁱ x` for an `r`-vector stored with stride `stride`, `Hⁱ = e₁ − Jᵢ e₀`.
#[inline]
fn h_row(row0: f64, row1: f64, jac: f64) -> f64 {
    row1 - jac * row0
}

/// `H Σ(h) Hᵀ` with unit diffusion, in the layout's natural form.
pub(crate) fn noise_measurement(
    structure: Structure,
    lin: &Linearization,
    tm: &TransitionModel,
    gamma_breve: &GammaBreve,
) -> NoiseMeasurement {
    let r = tm.phi.nrows();
    let d = lin.dim();
    let l = &tm.sigma_sqrt;
    let right = l.row(1).norm_squared();
    match (structure, &lin.jac_dense, gamma_breve.matrix()) {
        (Structure::Dense, None, KronLeft::Identity(_) | KronLeft::Diagonal(_))
        | (Structure::BlockDiagonal | Structure::Kronecker, _, _) => {
            let jd = lin.diagonal();
            let diag = (0..d)
                .map(|i| {
                    let w: f64 = (0..r)
                        .map(|c| h_row(l[(0, c)], l[(1, c)], jd[i]).powi(2))
                        .sum();
                    gamma_breve.matrix().diag(i) * w
                })
                .collect();
            NoiseMeasurement {
                diag,
                full: None,
                right,
            }
        }
        (Structure::Dense, _, _) => {
            // W = H (√Γ̆ ⊗ √Σ̆), S = W Wᵀ.
            let sqrt_noise = gamma_breve.sqrt().to_dense().kronecker(l);
            let w = apply_h_dense(lin, &sqrt_noise, r);
            let full = &w * w.transpose();
            NoiseMeasurement {
                diag: full.diagonal().as_slice().to_vec(),
                full: Some(full),
                right,
            }
        }
    }
}

/// `H M` for `H = E₁ − F_y E₀` and an `n × k` matrix `M`.
fn apply_h_dense(lin: &Linearization, m: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let d = lin.dim();
    let k = m.ncols();
    let mut out = DMatrix::zeros(d, k);
    for i in 0..d {
        out.row_mut(i).copy_from(&m.row(i * r + 1));
    }
    if let Some(j) = &lin.jac_dense {
        let mut e0 = DMatrix::zeros(d, k);
        for i in 0..d {
            e0.row_mut(i).copy_from(&m.row(i * r));
        }
        out -= j * e0;
    } else if let Some(jd) = &lin.jac_diag {
        for i in 0..d {
            if jd[i] != 0.0 {
                for c in 0..k {
                    out[(i, c)] -= jd[i] * m[(i * r, c)];
                }
            }
        }
    }
    out
}

fn singular(t: f64, s: &[f64]) -> Result<()> {
    for (index, &value) in s.iter().enumerate() {
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::SingularInnovation { t, index, value });
        }
    }
    Ok(())
}

/// Residual `z` and innovation covariance of the predicted state.
pub fn measure(
    pred: &GaussianState,
    lin: &Linearization,
    tm: &TransitionModel,
    gamma_breve: &GammaBreve,
) -> Result<Measurement> {
    let r = pred.block();
    let d = pred.dim();
    if lin.dim() != d {
        return Err(Error::DimensionMismatch {
            context: "linearization",
            expected: d,
            found: lin.dim(),
        });
    }
    let z = lin.residual(&pred.coord(0), &pred.coord(1));
    let structure = pred.structure();
    let sigma_meas = noise_measurement(structure, lin, tm, gamma_breve).diag;
    let (s, cache) = match &pred.cov_sqrt {
        StructuredMatrix::Kronecker { right, .. } => {
            if lin.jac_diag.is_some() || lin.jac_dense.is_some() {
                return Err(Error::Config(
                    "Kronecker covariances support only the zero-Jacobian linearization".into(),
                ));
            }
            let v: Vec<f64> = right.row(1).iter().copied().collect();
            let scalar: f64 = v.iter().map(|x| x * x).sum();
            singular(pred.t, &[scalar])?;
            let gamma = Arc::new(gamma_breve.clone());
            (
                Innovation::Kronecker { scalar, gamma },
                MeasureCache::Rows(v),
            )
        }
        StructuredMatrix::BlockDiagonal(b) => {
            if lin.jac_dense.is_some() {
                return Err(Error::Config(
                    "block-diagonal covariances need a diagonal Jacobian".into(),
                ));
            }
            let jd = lin.diagonal();
            let mut rows = vec![0.0; d * r];
            let mut s = vec![0.0; d];
            for i in 0..d {
                let blk = b.block_slice(i);
                let v = &mut rows[i * r..(i + 1) * r];
                for c in 0..r {
                    v[c] = h_row(blk[c * r], blk[1 + c * r], jd[i]);
                }
                s[i] = v.iter().map(|x| x * x).sum();
            }
            singular(pred.t, &s)?;
            (Innovation::Diagonal(s), MeasureCache::Rows(rows))
        }
        StructuredMatrix::Dense(c) => {
            let v = apply_h_dense(lin, c, r);
            let s = &v * v.transpose();
            singular(pred.t, s.diagonal().as_slice())?;
            (Innovation::Dense(s), MeasureCache::Dense(v))
        }
    };
    Ok(Measurement {
        z,
        s,
        sigma_meas,
        cache,
    })
}

/// Joseph-form correction. Never forms a covariance.
pub fn correct(pred: &GaussianState, meas: &Measurement) -> Result<GaussianState> {
    let r = pred.block();
    let d = pred.dim();
    let mut mean = pred.mean.clone();
    let cov_sqrt = match (&pred.cov_sqrt, &meas.s, &meas.cache) {
        (
            StructuredMatrix::Kronecker { left, right },
            Innovation::Kronecker { scalar, .. },
            MeasureCache::Rows(v),
        ) => {
            // K̆ = √C̆⁻ vᵀ / s
            let k: Vec<f64> = (0..r)
                .map(|p| (0..r).map(|c| right[(p, c)] * v[c]).sum::<f64>() / scalar)
                .collect();
            for (row, zi) in mean.chunks_exact_mut(r).zip(&meas.z) {
                for p in 0..r {
                    row[p] -= k[p] * zi;
                }
            }
            let mut new_right = right.clone();
            for c in 0..r {
                for p in 0..r {
                    new_right[(p, c)] -= k[p] * v[c];
                }
            }
            StructuredMatrix::Kronecker {
                left: Arc::clone(left),
                right: new_right,
            }
        }
        (StructuredMatrix::BlockDiagonal(b), Innovation::Diagonal(s), MeasureCache::Rows(rows)) => {
            let mut out = b.clone();
            let mut k = vec![0.0; r];
            for i in 0..d {
                let blk = out.block_slice_mut(i);
                let v = &rows[i * r..(i + 1) * r];
                for p in 0..r {
                    k[p] = (0..r).map(|c| blk[p + c * r] * v[c]).sum::<f64>() / s[i];
                }
                let zi = meas.z[i];
                for p in 0..r {
                    mean[i * r + p] -= k[p] * zi;
                }
                for c in 0..r {
                    for p in 0..r {
                        blk[p + c * r] -= k[p] * v[c];
                    }
                }
            }
            StructuredMatrix::BlockDiagonal(out)
        }
        (StructuredMatrix::Dense(c), Innovation::Dense(s), MeasureCache::Dense(v)) => {
            let chol = s
                .clone()
                .cholesky()
                .ok_or_else(|| Error::SingularInnovation {
                    t: pred.t,
                    index: 0,
                    value: s.diagonal().min(),
                })?;
            // Kᵀ = S⁻¹ V √C⁻ᵀ
            let kt = chol.solve(&(v * c.transpose()));
            let k = kt.transpose();
            let dm = &k * DVector::from_column_slice(&meas.z);
            mean.iter_mut().zip(dm.iter()).for_each(|(m, x)| *m -= x);
            StructuredMatrix::Dense(c - &k * v)
        }
        _ => {
            return Err(Error::Config(
                "measurement does not match the state's covariance layout".into(),
            ))
        }
    };
    let out = GaussianState {
        t: pred.t,
        nu: pred.nu,
        mean,
        cov_sqrt,
    };
    out.check_finite("corrected")?;
    Ok(out)
}

/// Triangularizing correction of a dense square root, used as a second reference.
pub fn correct_conventional(pred: &GaussianState, meas: &Measurement) -> Result<GaussianState> {
    let (StructuredMatrix::Dense(c), MeasureCache::Dense(v)) = (&pred.cov_sqrt, &meas.cache) else {
        return Err(Error::Config(
            "the conventional correction is only implemented for dense covariances".into(),
        ));
    };
    let n = c.nrows();
    let d = v.nrows();
    // Rows of [[Vᵀ, √C⁻ᵀ], [0, 0]] padded to n + d rows.
    let mut top = DMatrix::zeros(n, d + n);
    top.columns_mut(0, d).copy_from(&v.transpose());
    top.columns_mut(d, n).copy_from(&c.transpose());
    let rfac = gram_sqrt_of_stack(&top, &DMatrix::zeros(d, d + n))?;
    let r11 = rfac.view((0, 0), (d, d)).clone_owned();
    let r12 = rfac.view((0, d), (d, n)).clone_owned();
    let r22 = rfac.view((d, d), (n, n)).clone_owned();
    // K = R12ᵀ R11⁻ᵀ, so Kz = R12ᵀ (R11ᵀ)⁻¹ z.
    let w = r11
        .transpose()
        .solve_lower_triangular(&DVector::from_column_slice(&meas.z))
        .ok_or(Error::SingularInnovation {
            t: pred.t,
            index: 0,
            value: 0.0,
        })?;
    let dm = r12.transpose() * w;
    let mean: Vec<f64> = pred
        .mean
        .iter()
        .zip(dm.iter())
        .map(|(m, x)| m - x)
        .collect();
    let out = GaussianState {
        t: pred.t,
        nu: pred.nu,
        mean,
        cov_sqrt: StructuredMatrix::Dense(r22.transpose()),
    };
    out.check_finite("corrected")?;
    Ok(out)
}

/// Local diffusion estimate from the residual and `H Σ(h) Hᵀ`.
pub(crate) fn calibrate_local(
    shape: Shape,
    structure: Structure,
    z: &[f64],
    noise: &NoiseMeasurement,
    gamma_breve: &GammaBreve,
) -> Result<GammaSq> {
    Ok(match shape {
        Shape::Vector => GammaSq::Vector(calibrate_local_vector(z, &noise.diag)?),
        Shape::Scalar => match (structure, &noise.full) {
            (Structure::Kronecker, _) => {
                GammaSq::Scalar(calibrate_local_kronecker(z, noise.right, gamma_breve)?)
            }
            (_, Some(full)) => GammaSq::Scalar(inv_quad_spd(full, z)? / z.len() as f64),
            (_, None) => GammaSq::Scalar(calibrate_local_scalar(z, &noise.diag)?),
        },
    })
}

/// One step of size `h` from `state`.
pub fn step(
    state: &GaussianState,
    h: f64,
    cfg: &SolverConfig,
    problem: &OdeProblem,
) -> Result<StepOutput> {
    let prior = cfg.prior(problem.dim())?;
    step_with_prior(state, h, cfg, &prior, problem)
}

/// [`step`] with a prebuilt prior, as used inside the solve loop.
pub fn step_with_prior(
    state: &GaussianState,
    h: f64,
    cfg: &SolverConfig,
    prior: &IwpPrior,
    problem: &OdeProblem,
) -> Result<StepOutput> {
    if state.structure() != cfg.structure {
        return Err(Error::Config(format!(
            "state layout {} does not match configured {}",
            state.structure().name(),
            cfg.structure.name()
        )));
    }
    let spec = prior.diffusion();
    let gamma_breve = spec.gamma_breve();
    let tm = discretize(prior, h).map_err(|e| e.in_phase("discretize"))?;
    let t_new = state.t + h;
    let mean_pred = predict_mean(&state.mean, &tm);
    let r = state.block();
    let xi: Vec<f64> = mean_pred.iter().step_by(r).copied().collect();
    let lin =
        linearize_at(cfg.strategy, problem, &xi, t_new).map_err(|e| e.in_phase("linearize"))?;

    let (gamma_hat, noise) = {
        let noise = noise_measurement(cfg.structure, &lin, &tm, gamma_breve);
        let deriv: Vec<f64> = mean_pred.iter().skip(1).step_by(r).copied().collect();
        let z = lin.residual(&xi, &deriv);
        let g = calibrate_local(spec.shape, cfg.structure, &z, &noise, gamma_breve)
            .map_err(|e| e.in_phase("calibrate"))?;
        (g, noise)
    };
    let gamma_used = match spec.variability {
        Variability::TimeVarying => gamma_hat.floored(),
        Variability::TimeConstant => GammaSq::Scalar(1.0),
    };

    let cov_pred = predict_cov(&state.cov_sqrt, &tm, gamma_breve, &gamma_used)
        .map_err(|e| e.in_phase("predict"))?;
    let pred = GaussianState {
        t: t_new,
        nu: state.nu,
        mean: mean_pred,
        cov_sqrt: cov_pred,
    };
    let meas = measure(&pred, &lin, &tm, gamma_breve).map_err(|e| e.in_phase("measure"))?;
    let new_state = match cfg.correction {
        CorrectionForm::Joseph => correct(&pred, &meas),
        CorrectionForm::Conventional => correct_conventional(&pred, &meas),
    }
    .map_err(|e| e.in_phase("correct"))?;
    debug_assert_eq!(new_state.structure(), state.structure());

    let error_estimate = noise
        .diag
        .iter()
        .enumerate()
        .map(|(i, s)| (gamma_hat.get(i).max(0.0) * s).sqrt())
        .collect();
    Ok(StepOutput {
        state: new_state,
        error_estimate,
        gamma_hat,
        measurement: meas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibrate::DiffusionSpec;
    use crate::linearize::LinearizationStrategy;

    fn tm(nu: usize, h: f64) -> TransitionModel {
        discretize(
            &IwpPrior::new(nu, 1, DiffusionSpec::default_for(1)).unwrap(),
            h,
        )
        .unwrap()
    }

    fn block_state(mean: Vec<f64>, blocks: &[DMatrix<f64>]) -> GaussianState {
        let nu = blocks[0].nrows() - 1;
        GaussianState::new(
            0.0,
            nu,
            mean,
            StructuredMatrix::BlockDiagonal(BlockDiagonal::from_blocks(blocks).unwrap()),
        )
        .unwrap()
    }

    fn identity_problem(d: usize) -> OdeProblem {
        OdeProblem::new(
            "id",
            vec![1.0; d],
            (0.0, 1.0),
            |_t, y: &[f64], o: &mut [f64]| o.copy_from_slice(y),
        )
        .unwrap()
    }

    fn c_minus() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[7.0 / 3.0, 1.5, 1.5, 2.0])
    }

    #[test]
    fn predict_mean_unit_step() {
        assert_eq!(predict_mean(&[0.0, 1.0], &tm(1, 1.0)), vec![1.0, 1.0]);
    }

    #[test]
    fn predict_blocks_unit_step() {
        let s = block_state(
            vec![0.0; 4],
            &[DMatrix::identity(2, 2), DMatrix::identity(2, 2)],
        );
        let p = predict(
            &s,
            &tm(1, 1.0),
            &GammaBreve::identity(2),
            &GammaSq::Scalar(1.0),
        )
        .unwrap();
        let StructuredMatrix::BlockDiagonal(b) = &p.cov_sqrt else {
            panic!()
        };
        for blk in b.blocks() {
            assert!((blk * blk.transpose() - c_minus()).amax() < 1e-12);
        }
    }

    #[test]
    fn tiny_step_leaves_state_unchanged() {
        let s = block_state(
            vec![0.3, -1.0],
            &[DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 2.0])],
        );
        let p = predict(
            &s,
            &tm(1, 1e-14),
            &GammaBreve::identity(1),
            &GammaSq::Scalar(1.0),
        )
        .unwrap();
        for (a, b) in p.mean.iter().zip(&s.mean) {
            assert!((a - b).abs() < 1e-13);
        }
        let diff = p.cov_sqrt.gram().to_dense() - s.cov_sqrt.gram().to_dense();
        assert!(diff.amax() < 1e-12);
    }

    fn kron_pred(mean: Vec<f64>, d: usize) -> GaussianState {
        let right = c_minus().cholesky().unwrap().l();
        GaussianState::new(
            1.0,
            1,
            mean,
            StructuredMatrix::kronecker(Arc::new(KronLeft::Identity(d)), right),
        )
        .unwrap()
    }

    #[test]
    fn measure_kronecker_scalar() {
        let p = identity_problem(1);
        let pred = kron_pred(vec![1.0, 1.0], 1);
        let lin = linearize_at(LinearizationStrategy::Ek0, &p, &[1.0], 1.0).unwrap();
        let m = measure(&pred, &lin, &tm(1, 1.0), &GammaBreve::identity(1)).unwrap();
        assert_eq!(m.z, vec![0.0]);
        let Innovation::Kronecker { scalar, .. } = m.s else {
            panic!()
        };
        assert!((scalar - 2.0).abs() < 1e-14);
    }

    #[test]
    fn measure_blocks_zero_jacobian() {
        let p = identity_problem(2).with_jac_diag(|_t, _y, o: &mut [f64]| o.fill(0.0));
        let l = c_minus().cholesky().unwrap().l();
        let pred = block_state(vec![1.0, 1.0, 1.0, 1.0], &[l.clone(), l]);
        let lin = linearize_at(LinearizationStrategy::DiagonalEk1, &p, &[1.0, 1.0], 1.0).unwrap();
        let m = measure(&pred, &lin, &tm(1, 1.0), &GammaBreve::identity(2)).unwrap();
        let s = m.s.diag();
        assert!((s[0] - 2.0).abs() < 1e-14 && (s[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn correct_kronecker_by_hand() {
        // f = 0 with derivative mean 2 gives z = 2.
        let p = OdeProblem::new(
            "zero",
            vec![0.0],
            (0.0, 1.0),
            |_t, _y: &[f64], o: &mut [f64]| o[0] = 0.0,
        )
        .unwrap();
        let pred = kron_pred(vec![5.0, 2.0], 1);
        let lin = linearize_at(LinearizationStrategy::Ek0, &p, &[5.0], 1.0).unwrap();
        let m = measure(&pred, &lin, &tm(1, 1.0), &GammaBreve::identity(1)).unwrap();
        assert_eq!(m.z, vec![2.0]);
        let c = correct(&pred, &m).unwrap();
        assert!((c.mean[0] - 3.5).abs() < 1e-14 && c.mean[1].abs() < 1e-14);
        let StructuredMatrix::Kronecker { right, .. } = &c.cov_sqrt else {
            panic!()
        };
        assert!((right * right.transpose())[(1, 1)].abs() < 1e-14);
    }

    #[test]
    fn zero_residual_keeps_mean() {
        let p = identity_problem(1);
        let pred = kron_pred(vec![1.0, 1.0], 1);
        let lin = linearize_at(LinearizationStrategy::Ek0, &p, &[1.0], 1.0).unwrap();
        let m = measure(&pred, &lin, &tm(1, 1.0), &GammaBreve::identity(1)).unwrap();
        assert_eq!(correct(&pred, &m).unwrap().mean, pred.mean);
    }

    #[test]
    fn degenerate_covariance_is_singular_innovation() {
        let p = identity_problem(1);
        let pred = block_state(vec![1.0, 1.0], &[DMatrix::zeros(2, 2)]);
        let lin = linearize_at(LinearizationStrategy::Ek0, &p, &[1.0], 0.5).unwrap();
        let err = measure(&pred, &lin, &tm(1, 1.0), &GammaBreve::identity(1)).unwrap_err();
        assert!(matches!(err, Error::SingularInnovation { index: 0, .. }));
    }

    #[test]
    fn conventional_matches_joseph_on_dense() {
        let p = crate::problems::vanderpol(2.0).unwrap();
        let c = DMatrix::from_fn(4, 4, |i, j| {
            ((i * 4 + j) as f64 * 0.37).sin() + if i == j { 2.0 } else { 0.0 }
        });
        let pred = GaussianState::new(
            0.1,
            1,
            vec![1.0, 0.5, -0.3, 0.2],
            StructuredMatrix::Dense(c),
        )
        .unwrap();
        let lin = linearize_at(LinearizationStrategy::DenseEk1, &p, &[1.0, -0.3], 0.1).unwrap();
        let m = measure(&pred, &lin, &tm(1, 0.1), &GammaBreve::identity(2)).unwrap();
        let a = correct(&pred, &m).unwrap();
        let b = correct_conventional(&pred, &m).unwrap();
        for (x, y) in a.mean.iter().zip(&b.mean) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a.cov_sqrt.gram().to_dense() - b.cov_sqrt.gram().to_dense()).amax() < 1e-12);
    }
}
