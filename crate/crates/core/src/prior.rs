//! Integrated Wiener process prior and its closed-form discretization.
//!
//! For a step `h` the transition of one dimension is
//!
//! ```text
//! Φ̆[i][j] = h^(j-i) / (j-i)!                                   (j ≥ i)
//! Σ̆[i][j] = h^(2ν+1-i-j) / ((2ν+1-i-j) (ν-i)! (ν-j)!)
//! ```
//!
//! With the Nordsieck scaling `P = diag(√h h^(ν-q) / (ν-q)!)`, the scaled
//! matrices `P⁻¹Φ̆P` (binomial coefficients) and `P⁻¹Σ̆P⁻ᵀ` (a Hilbert-type
//! matrix) do not depend on `h`. Covariance prediction runs in those
//! coordinates.

use nalgebra::DMatrix;

use crate::calibrate::DiffusionSpec;
use crate::error::{Error, Result};

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    factorial(n) / (factorial(k) * factorial(n - k))
}

fn check_step(h: f64) -> Result<()> {
    if h.is_finite() && h > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "step size must be positive and finite, got {h}"
        )))
    }
}

/// ν-times integrated Wiener process over `dim` independent dimensions.
#[derive(Debug, Clone)]
pub struct IwpPrior {
    nu: usize,
    dim: usize,
    diffusion: DiffusionSpec,
    phi_scaled: DMatrix<f64>,
    sigma_sqrt_scaled: DMatrix<f64>,
}

impl IwpPrior {
    pub fn new(nu: usize, dim: usize, diffusion: DiffusionSpec) -> Result<Self> {
        if nu == 0 {
            return Err(Error::InvalidArgument(
                "order must be at least 1: the measurement needs the first derivative".into(),
            ));
        }
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "dimension must be at least 1".into(),
            ));
        }
        if diffusion.gamma_breve().dim() != dim {
            return Err(Error::DimensionMismatch {
                context: "diffusion left factor",
                expected: dim,
                found: diffusion.gamma_breve().dim(),
            });
        }
        let r = nu + 1;
        let phi_scaled = DMatrix::from_fn(
            r,
            r,
            |i, j| if j >= i { binomial(nu - i, j - i) } else { 0.0 },
        );
        let sigma_scaled = DMatrix::from_fn(r, r, |i, j| 1.0 / (2 * nu + 1 - i - j) as f64);
        let sigma_sqrt_scaled = sigma_scaled
            .cholesky()
            .ok_or_else(|| {
                Error::InvalidArgument(format!("order {nu} too large for a stable prior"))
            })?
            .unpack();
        Ok(Self {
            nu,
            dim,
            diffusion,
            phi_scaled,
            sigma_sqrt_scaled,
        })
    }

    pub fn nu(&self) -> usize {
        self.nu
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Block size `ν + 1`.
    pub fn block(&self) -> usize {
        self.nu + 1
    }

    pub fn diffusion(&self) -> &DiffusionSpec {
        &self.diffusion
    }

    /// Transition in Nordsieck-scaled coordinates (independent of `h`).
    pub fn phi_scaled(&self) -> &DMatrix<f64> {
        &self.phi_scaled
    }

    /// Lower Cholesky factor of the scaled unit-diffusion covariance.
    pub fn sigma_sqrt_scaled(&self) -> &DMatrix<f64> {
        &self.sigma_sqrt_scaled
    }
}

/// Discretized prior for one step of size `step`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    pub phi: DMatrix<f64>,
    /// Square root of the unit-diffusion process noise, original coordinates.
    pub sigma_sqrt: DMatrix<f64>,
    pub step: f64,
    /// `T[q] = √h h^q / q!`. Coordinate `q` is scaled by `T[ν - q]`.
    pub precond: Vec<f64>,
    pub(crate) phi_scaled: DMatrix<f64>,
    pub(crate) sigma_sqrt_scaled: DMatrix<f64>,
}

impl TransitionModel {
    /// Scale applied to derivative coordinate `q`.
    pub fn scale(&self, q: usize) -> f64 {
        self.precond[self.precond.len() - 1 - q]
    }

    /// `Σ̆ = √Σ̆ √Σ̆ᵀ`.
    pub fn sigma(&self) -> DMatrix<f64> {
        &self.sigma_sqrt * self.sigma_sqrt.transpose()
    }

    /// `x ↦ P⁻¹x` for a single block.
    pub fn to_scaled(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(q, v)| v / self.scale(q))
            .collect()
    }

    /// `u ↦ P u` for a single block.
    pub fn from_scaled(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(q, v)| v * self.scale(q))
            .collect()
    }
}

/// `T[q] = √h · h^q / q!` for `q = 0..=ν`.
pub fn preconditioner(nu: usize, h: f64) -> Result<Vec<f64>> {
    check_step(h)?;
    let sqrt_h = h.sqrt();
    let mut out = Vec::with_capacity(nu + 1);
    let mut term = sqrt_h;
    for q in 0..=nu {
        if q > 0 {
            term *= h / q as f64;
        }
        out.push(term);
    }
    Ok(out)
}

/// Closed-form `Φ̆(h)` and a square root of `Σ̆(h)`.
pub fn discretize(prior: &IwpPrior, h: f64) -> Result<TransitionModel> {
    check_step(h)?;
    let nu = prior.nu;
    let r = nu + 1;
    let precond = preconditioner(nu, h)?;
    let phi = phi_breve(nu, h);
    let mut sigma_sqrt = prior.sigma_sqrt_scaled.clone();
    for q in 0..r {
        let s = precond[nu - q];
        sigma_sqrt.row_mut(q).scale_mut(s);
    }
    Ok(TransitionModel {
        phi,
        sigma_sqrt,
        step: h,
        precond,
        phi_scaled: prior.phi_scaled.clone(),
        sigma_sqrt_scaled: prior.sigma_sqrt_scaled.clone(),
    })
}

/// `Φ̆(h)` evaluated entrywise.
pub fn phi_breve(nu: usize, h: f64) -> DMatrix<f64> {
    let r = nu + 1;
    DMatrix::from_fn(r, r, |i, j| {
        if j >= i {
            h.powi((j - i) as i32) / factorial(j - i)
        } else {
            0.0
        }
    })
}

/// `Σ̆(h)` evaluated entrywise. Severely ill-conditioned for small `h`; used by tests and the dense oracle.
pub fn sigma_breve(nu: usize, h: f64) -> DMatrix<f64> {
    let r = nu + 1;
    DMatrix::from_fn(r, r, |i, j| {
        let p = 2 * nu + 1 - i - j;
        h.powi(p as i32) / (p as f64 * factorial(nu - i) * factorial(nu - j))
    })
}
