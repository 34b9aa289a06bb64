//! Diffusion models and their quasi-maximum-likelihood estimators.
//!
//! The process noise is `Γ ⊗ Σ̆(h)` with `Γ = γ² Γ̆` (scalar) or
//! `Γ = diag(γᵢ²) Γ̆` (vector, diagonal `Γ̆` only). Time-varying estimates are
//! recomputed every step from the local defect; time-constant estimates are
//! accumulated over the solve and applied afterwards.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::stepper::GaussianState;
use crate::structmat::{KronLeft, StructuredMatrix};

/// Smallest diffusion used to scale a process-noise covariance.
pub const GAMMA_SQ_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variability {
    TimeVarying,
    TimeConstant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Scalar,
    Vector,
}

type InvQuad = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// The fixed left factor `Γ̆` with its square root and a cheap `xᵀΓ̆⁻¹x`.
#[derive(Clone)]
pub struct GammaBreve {
    matrix: KronLeft,
    sqrt: Arc<KronLeft>,
    inv_quad: InvQuad,
}

impl fmt::Debug for GammaBreve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GammaBreve")
            .field("matrix", &self.matrix)
            .finish_non_exhaustive()
    }
}

impl GammaBreve {
    pub fn identity(d: usize) -> Self {
        Self {
            matrix: KronLeft::Identity(d),
            sqrt: Arc::new(KronLeft::Identity(d)),
            inv_quad: Arc::new(|x: &[f64]| x.iter().map(|v| v * v).sum()),
        }
    }

    pub fn diagonal(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidArgument(
                "diagonal diffusion entries must be positive".into(),
            ));
        }
        let inv: Vec<f64> = values.iter().map(|v| 1.0 / v).collect();
        Ok(Self {
            sqrt: Arc::new(KronLeft::Diagonal(
                values.iter().map(|v| v.sqrt()).collect(),
            )),
            matrix: KronLeft::Diagonal(values),
            inv_quad: Arc::new(move |x: &[f64]| x.iter().zip(&inv).map(|(v, w)| v * v * w).sum()),
        })
    }

    /// Dense SPD `Γ̆`. The default inverse quadratic form costs `O(d²)`;
    /// supply a faster one with [`GammaBreve::with_inv_quad`].
    pub fn dense(matrix: DMatrix<f64>) -> Result<Self> {
        let chol = matrix.clone().cholesky().ok_or_else(|| {
            Error::InvalidArgument("dense diffusion factor is not positive definite".into())
        })?;
        let l = chol.l();
        let l_solve = l.clone();
        Ok(Self {
            matrix: KronLeft::Dense(matrix),
            sqrt: Arc::new(KronLeft::Dense(l)),
            inv_quad: Arc::new(move |x: &[f64]| {
                let w = l_solve
                    .solve_lower_triangular(&DVector::from_column_slice(x))
                    .expect("Cholesky factor has a positive diagonal");
                w.norm_squared()
            }),
        })
    }

    pub fn with_inv_quad(mut self, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.inv_quad = Arc::new(f);
        self
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn matrix(&self) -> &KronLeft {
        &self.matrix
    }

    /// Shared square root; every Kronecker covariance root points at this one allocation.
    pub fn sqrt(&self) -> &Arc<KronLeft> {
        &self.sqrt
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.matrix, KronLeft::Dense(_))
    }

    /// `xᵀ Γ̆⁻¹ x`.
    pub fn inv_quad(&self, x: &[f64]) -> f64 {
        (self.inv_quad)(x)
    }
}

impl PartialEq for GammaBreve {
    fn eq(&self, other: &Self) -> bool {
        self.matrix == other.matrix
    }
}

/// Which diffusion model the solver calibrates.
#[derive(Debug, Clone)]
pub struct DiffusionSpec {
    pub variability: Variability,
    pub shape: Shape,
    gamma_breve: Arc<GammaBreve>,
}

impl DiffusionSpec {
    pub fn new(variability: Variability, shape: Shape, gamma_breve: GammaBreve) -> Result<Self> {
        if shape == Shape::Vector && gamma_breve.is_dense() {
            return Err(Error::Config(
                "vector diffusion requires a diagonal left factor".into(),
            ));
        }
        Ok(Self {
            variability,
            shape,
            gamma_breve: Arc::new(gamma_breve),
        })
    }

    /// Time-varying scalar diffusion with `Γ̆ = I`.
    pub fn default_for(d: usize) -> Self {
        Self {
            variability: Variability::TimeVarying,
            shape: Shape::Scalar,
            gamma_breve: Arc::new(GammaBreve::identity(d)),
        }
    }

    pub fn gamma_breve(&self) -> &GammaBreve {
        &self.gamma_breve
    }

    /// Parses `tv-scalar`, `tv-vector`, `tc-scalar` or `tc-vector`.
    pub fn parse(name: &str, d: usize) -> Result<Self> {
        let (variability, shape) = match name {
            "tv-scalar" => (Variability::TimeVarying, Shape::Scalar),
            "tv-vector" => (Variability::TimeVarying, Shape::Vector),
            "tc-scalar" => (Variability::TimeConstant, Shape::Scalar),
            "tc-vector" => (Variability::TimeConstant, Shape::Vector),
            other => return Err(Error::Config(format!("unknown diffusion model '{other}'"))),
        };
        Self::new(variability, shape, GammaBreve::identity(d))
    }

    pub fn name(&self) -> &'static str {
        match (self.variability, self.shape) {
            (Variability::TimeVarying, Shape::Scalar) => "tv-scalar",
            (Variability::TimeVarying, Shape::Vector) => "tv-vector",
            (Variability::TimeConstant, Shape::Scalar) => "tc-scalar",
            (Variability::TimeConstant, Shape::Vector) => "tc-vector",
        }
    }
}

/// A diffusion estimate: one value, or one per dimension.
#[derive(Debug, Clone, PartialEq)]
pub enum GammaSq {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl GammaSq {
    pub fn get(&self, i: usize) -> f64 {
        match self {
            GammaSq::Scalar(g) => *g,
            GammaSq::Vector(v) => v[i],
        }
    }

    /// Applies [`GAMMA_SQ_FLOOR`] entrywise.
    pub fn floored(&self) -> GammaSq {
        match self {
            GammaSq::Scalar(g) => GammaSq::Scalar(g.max(GAMMA_SQ_FLOOR)),
            GammaSq::Vector(v) => {
                GammaSq::Vector(v.iter().map(|g| g.max(GAMMA_SQ_FLOOR)).collect())
            }
        }
    }

    pub fn as_vec(&self) -> Vec<f64> {
        match self {
            GammaSq::Scalar(g) => vec![*g],
            GammaSq::Vector(v) => v.clone(),
        }
    }
}

fn check_sigma(sigma_meas: &[f64]) -> Result<()> {
    for (i, s) in sigma_meas.iter().enumerate() {
        if !(s.is_finite() && *s > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "measurement noise variance at dimension {i} must be positive, got {s}"
            )));
        }
    }
    Ok(())
}

fn check_len(z: &[f64], sigma_meas: &[f64]) -> Result<()> {
    if z.len() != sigma_meas.len() {
        return Err(Error::DimensionMismatch {
            context: "calibration residual",
            expected: sigma_meas.len(),
            found: z.len(),
        });
    }
    Ok(())
}

/// Local scalar estimate `(1/d) Σᵢ zᵢ² / sigma_meas[i]` for diagonal `[HΣHᵀ]`.
pub fn calibrate_local_scalar(z: &[f64], sigma_meas: &[f64]) -> Result<f64> {
    check_len(z, sigma_meas)?;
    check_sigma(sigma_meas)?;
    let sum: f64 = z.iter().zip(sigma_meas).map(|(z, s)| z * z / s).sum();
    Ok(sum / z.len() as f64)
}

/// Local scalar estimate for `HΣHᵀ = Γ̆ ⊗ sigma_right`: `(1/d) zᵀΓ̆⁻¹z / sigma_right`.
pub fn calibrate_local_kronecker(z: &[f64], sigma_right: f64, gamma: &GammaBreve) -> Result<f64> {
    if z.len() != gamma.dim() {
        return Err(Error::DimensionMismatch {
            context: "calibration residual",
            expected: gamma.dim(),
            found: z.len(),
        });
    }
    check_sigma(&[sigma_right])?;
    Ok(gamma.inv_quad(z) / (z.len() as f64 * sigma_right))
}

/// Local per-dimension estimates `zᵢ² / sigma_meas[i]`.
pub fn calibrate_local_vector(z: &[f64], sigma_meas: &[f64]) -> Result<Vec<f64>> {
    check_len(z, sigma_meas)?;
    check_sigma(sigma_meas)?;
    Ok(z.iter().zip(sigma_meas).map(|(z, s)| z * z / s).collect())
}

/// Running sums for the time-constant estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationAccumulator {
    shape: Shape,
    count: usize,
    sums: Vec<f64>,
}

impl CalibrationAccumulator {
    pub fn scalar() -> Self {
        Self {
            shape: Shape::Scalar,
            count: 0,
            sums: vec![0.0],
        }
    }

    pub fn vector(d: usize) -> Self {
        Self {
            shape: Shape::Vector,
            count: 0,
            sums: vec![0.0; d],
        }
    }

    pub fn for_shape(shape: Shape, d: usize) -> Self {
        match shape {
            Shape::Scalar => Self::scalar(),
            Shape::Vector => Self::vector(d),
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn sums(&self) -> &[f64] {
        &self.sums
    }

    pub fn is_scalar(&self) -> bool {
        self.shape == Shape::Scalar
    }

    /// Adds one step's `zᵢ² / s_unit[i]`, or their mean in the scalar case.
    pub fn accumulate(&mut self, z: &[f64], s_unit: &[f64]) -> Result<()> {
        if self.is_scalar() {
            let local = calibrate_local_scalar(z, s_unit)?;
            self.push_scalar(local);
        } else {
            if z.len() != self.sums.len() {
                return Err(Error::DimensionMismatch {
                    context: "calibration accumulator",
                    expected: self.sums.len(),
                    found: z.len(),
                });
            }
            let local = calibrate_local_vector(z, s_unit)?;
            self.sums.iter_mut().zip(&local).for_each(|(s, l)| *s += l);
            self.count += 1;
        }
        Ok(())
    }

    /// Adds an already-reduced scalar ratio, e.g. `(1/d) zᵀS⁻¹z` for a non-diagonal `S`.
    pub fn push_scalar(&mut self, value: f64) {
        debug_assert!(self.is_scalar());
        self.sums[0] += value;
        self.count += 1;
    }

    /// Adds a per-step estimate of matching shape.
    pub fn push(&mut self, value: &GammaSq) -> Result<()> {
        match value {
            GammaSq::Scalar(g) if self.is_scalar() => self.push_scalar(*g),
            GammaSq::Vector(v) if v.len() == self.sums.len() && !self.is_scalar() => {
                self.sums.iter_mut().zip(v).for_each(|(s, g)| *s += g);
                self.count += 1;
            }
            _ => {
                return Err(Error::DimensionMismatch {
                    context: "calibration accumulator",
                    expected: self.sums.len(),
                    found: value.as_vec().len(),
                })
            }
        }
        Ok(())
    }

    pub fn finalize(&self) -> Result<GammaSq> {
        if self.count == 0 {
            return Err(Error::EmptyAccumulator);
        }
        let n = self.count as f64;
        Ok(if self.is_scalar() {
            GammaSq::Scalar(self.sums[0] / n)
        } else {
            GammaSq::Vector(self.sums.iter().map(|s| s / n).collect())
        })
    }
}

/// Functional form of [`CalibrationAccumulator::accumulate`].
pub fn accumulate_time_constant(
    mut acc: CalibrationAccumulator,
    z: &[f64],
    s_unit: &[f64],
) -> Result<CalibrationAccumulator> {
    acc.accumulate(z, s_unit)?;
    Ok(acc)
}

/// Scales a covariance square root so the covariance scales by `gamma_sq`.
pub fn rescale_cov_sqrt(
    cov_sqrt: &StructuredMatrix,
    r: usize,
    gamma_sq: &GammaSq,
) -> Result<StructuredMatrix> {
    let d = cov_sqrt.dim() / r;
    if let GammaSq::Vector(v) = gamma_sq {
        if v.len() != d {
            return Err(Error::DimensionMismatch {
                context: "post-hoc diffusion",
                expected: d,
                found: v.len(),
            });
        }
    }
    Ok(match (cov_sqrt, gamma_sq) {
        (StructuredMatrix::Kronecker { left, right }, GammaSq::Scalar(g)) => {
            StructuredMatrix::Kronecker {
                left: Arc::clone(left),
                right: right * g.sqrt(),
            }
        }
        (StructuredMatrix::Kronecker { .. }, GammaSq::Vector(_)) => {
            return Err(Error::Config(
                "Kronecker covariances admit only a scalar diffusion".into(),
            ))
        }
        (StructuredMatrix::BlockDiagonal(b), g) => {
            let mut out = b.clone();
            for i in 0..b.count() {
                let s = g.get(i).sqrt();
                out.block_slice_mut(i).iter_mut().for_each(|x| *x *= s);
            }
            StructuredMatrix::BlockDiagonal(out)
        }
        (StructuredMatrix::Dense(m), g) => {
            let mut out = m.clone();
            for i in 0..d {
                let s = g.get(i).sqrt();
                out.rows_mut(i * r, r).scale_mut(s);
            }
            StructuredMatrix::Dense(out)
        }
    })
}

/// Applies a time-constant diffusion estimate to states computed with unit diffusion. Means are unchanged.
pub fn rescale_posthoc(states: &[GaussianState], gamma_sq: &GammaSq) -> Result<Vec<GaussianState>> {
    states
        .iter()
        .map(|s| {
            Ok(GaussianState {
                cov_sqrt: rescale_cov_sqrt(&s.cov_sqrt, s.block(), gamma_sq)?,
                ..s.clone()
            })
        })
        .collect()
}
