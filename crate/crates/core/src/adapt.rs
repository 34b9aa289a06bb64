//! Local error norm and proportional–integral step-size control.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct StepController {
    pub rtol: f64,
    pub atol: f64,
    pub safety: f64,
    pub factor_min: f64,
    pub factor_max: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub pi_alpha: f64,
    pub pi_beta: f64,
}

impl StepController {
    /// Defaults for a prior of order `nu`: safety 0.9, factors in `[0.2, 10]`,
    /// exponents `0.7/ν` and `0.4/ν`.
    pub fn new(nu: usize, rtol: f64, atol: f64) -> Self {
        let nu = nu.max(1) as f64;
        Self {
            rtol,
            atol,
            safety: 0.9,
            factor_min: 0.2,
            factor_max: 10.0,
            h_min: 0.0,
            h_max: f64::INFINITY,
            pi_alpha: 0.7 / nu,
            pi_beta: 0.4 / nu,
        }
    }

    pub fn with_step_bounds(mut self, h_min: f64, h_max: f64) -> Self {
        self.h_min = h_min;
        self.h_max = h_max;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.rtol >= 0.0
            && self.atol >= 0.0
            && self.rtol + self.atol > 0.0
            && self.safety > 0.0
            && self.safety < 1.0
            && self.factor_min > 0.0
            && self.factor_min <= 1.0
            && self.factor_max >= 1.0
            && self.h_min >= 0.0
            && self.h_max > self.h_min;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid step controller: {self:?}")))
        }
    }
}

/// Root mean square of `err[i] / (atol + rtol · max(|y_prev[i]|, |y_new[i]|))`.
pub fn error_norm(err: &[f64], y_prev: &[f64], y_new: &[f64], ctrl: &StepController) -> f64 {
    let sum: f64 = err
        .iter()
        .zip(y_prev.iter().zip(y_new))
        .map(|(e, (a, b))| {
            let scale = ctrl.atol + ctrl.rtol * a.abs().max(b.abs());
            (e / scale).powi(2)
        })
        .sum();
    (sum / err.len().max(1) as f64).sqrt()
}

/// Outcome of [`propose`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub accept: bool,
    pub h_next: f64,
}

/// Accepts iff `norm ≤ 1` and proposes the next step size.
///
/// Fails with a step-size underflow when a rejected step would need `h < h_min`.
pub fn propose(
    h: f64,
    norm: f64,
    prev_norm: f64,
    ctrl: &StepController,
    t: f64,
) -> Result<Proposal> {
    let accept = norm <= 1.0;
    let raw = ctrl.safety * norm.powf(-ctrl.pi_alpha) * prev_norm.powf(ctrl.pi_beta);
    let factor = if raw.is_nan() {
        ctrl.factor_min
    } else {
        raw.clamp(ctrl.factor_min, ctrl.factor_max)
    };
    let wanted = h * factor;
    if !accept && wanted < ctrl.h_min {
        return Err(Error::StepSizeUnderflow {
            t,
            h: wanted,
            h_min: ctrl.h_min,
        });
    }
    Ok(Proposal {
        accept,
        h_next: wanted.clamp(ctrl.h_min, ctrl.h_max),
    })
}
