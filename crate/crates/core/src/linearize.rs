//! Linearized information operator `H = E₁ − F_y E₀`, `b = F_y ξ − f(ξ, t)`.
//!
//! `b` is never materialized; a [`Linearization`] keeps `f(ξ)`, `ξ` and `F_y`
//! so residuals cost `O(d)` (diagonal) or `O(d²)` (dense).

use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::problems::OdeProblem;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearizationStrategy {
    /// `F_y = 0`.
    Ek0,
    /// `F_y = diag(∂f/∂y)`.
    DiagonalEk1,
    /// `F_y = ∂f/∂y`.
    DenseEk1,
}

impl FromStr for LinearizationStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ek0" => Ok(Self::Ek0),
            "ek1-diag" | "diagonal-ek1" => Ok(Self::DiagonalEk1),
            "ek1" | "ek1-dense" => Ok(Self::DenseEk1),
            other => Err(Error::Config(format!("unknown linearization '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linearization {
    pub t: f64,
    /// `ξ = E₀ η`.
    pub point: Vec<f64>,
    /// `f(ξ, t)`.
    pub fval: Vec<f64>,
    pub jac_diag: Option<Vec<f64>>,
    pub jac_dense: Option<DMatrix<f64>>,
}

impl Linearization {
    pub fn dim(&self) -> usize {
        self.point.len()
    }

    /// `F_y ξ − f(ξ, t)`.
    pub fn offset(&self) -> Vec<f64> {
        let fx = self.apply_jacobian(&self.point);
        fx.iter().zip(&self.fval).map(|(a, f)| a - f).collect()
    }

    /// `F_y x`.
    pub fn apply_jacobian(&self, x: &[f64]) -> Vec<f64> {
        if let Some(j) = &self.jac_diag {
            j.iter().zip(x).map(|(a, b)| a * b).collect()
        } else if let Some(j) = &self.jac_dense {
            (j * nalgebra::DVector::from_column_slice(x))
                .as_slice()
                .to_vec()
        } else {
            vec![0.0; x.len()]
        }
    }

    /// `z = y1 − f(ξ, t) − F_y (y0 − ξ)` for value row `y0` and derivative row `y1`.
    pub fn residual(&self, y0: &[f64], y1: &[f64]) -> Vec<f64> {
        let delta: Vec<f64> = y0.iter().zip(&self.point).map(|(a, b)| a - b).collect();
        let fd = self.apply_jacobian(&delta);
        y1.iter()
            .zip(&self.fval)
            .zip(&fd)
            .map(|((y, f), j)| y - f - j)
            .collect()
    }

    /// Diagonal of `F_y` (zeros for EK0).
    pub fn diagonal(&self) -> Vec<f64> {
        if let Some(j) = &self.jac_diag {
            j.clone()
        } else if let Some(j) = &self.jac_dense {
            j.diagonal().as_slice().to_vec()
        } else {
            vec![0.0; self.dim()]
        }
    }
}

/// Linearizes `f` around `point = E₀ η`.
pub fn linearize_at(
    strategy: LinearizationStrategy,
    problem: &OdeProblem,
    point: &[f64],
    t: f64,
) -> Result<Linearization> {
    if point.len() != problem.dim() {
        return Err(Error::DimensionMismatch {
            context: "linearization point",
            expected: problem.dim(),
            found: point.len(),
        });
    }
    let fval = problem.eval(t, point)?;
    let (jac_diag, jac_dense) = match strategy {
        LinearizationStrategy::Ek0 => (None, None),
        LinearizationStrategy::DiagonalEk1 => {
            let diag = match problem.jac_diag(t, point) {
                Some(d) => d,
                None => {
                    let full = problem
                        .jac_dense(t, point)
                        .ok_or(Error::MissingJacobian("a diagonal or dense Jacobian"))?;
                    log::warn!("diagonal Jacobian extracted from a dense one at O(d^2) cost");
                    full.diagonal().as_slice().to_vec()
                }
            };
            (Some(diag), None)
        }
        LinearizationStrategy::DenseEk1 => {
            let full = problem
                .jac_dense(t, point)
                .ok_or(Error::MissingJacobian("a dense Jacobian"))?;
            (None, Some(full))
        }
    };
    let finite = jac_diag.iter().flatten().all(|v| v.is_finite())
        && jac_dense
            .iter()
            .flat_map(|m| m.iter())
            .all(|v| v.is_finite());
    if !finite {
        return Err(Error::NonFinite {
            what: format!("Jacobian at t = {t}"),
        });
    }
    Ok(Linearization {
        t,
        point: point.to_vec(),
        fval,
        jac_diag,
        jac_dense,
    })
}
