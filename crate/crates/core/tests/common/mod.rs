//! Test-only oracles. Nothing here calls the library's square-root or transition code.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use odefilter::OdeProblem;

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Transition of a ν-times integrated Wiener process over `h`.
pub fn phi_closed(nu: usize, h: f64) -> DMatrix<f64> {
    DMatrix::from_fn(nu + 1, nu + 1, |i, j| {
        if j >= i {
            h.powi((j - i) as i32) / factorial(j - i)
        } else {
            0.0
        }
    })
}

/// Unit-diffusion process noise over `h`.
pub fn sigma_closed(nu: usize, h: f64) -> DMatrix<f64> {
    DMatrix::from_fn(nu + 1, nu + 1, |i, j| {
        let p = 2 * nu + 1 - i - j;
        h.powi(p as i32) / (p as f64 * factorial(nu - i) * factorial(nu - j))
    })
}

pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(n, n);
    let mut o = 0;
    for b in blocks {
        out.view_mut((o, o), (b.nrows(), b.ncols())).copy_from(b);
        o += b.nrows();
    }
    out
}

/// One predict-and-condition step with full covariances.
///
/// `gamma_sq[i]` scales the process noise of dimension `i`; `jac` returns the
/// `d × d` matrix the linearization uses (zero for EK0).
#[allow(clippy::too_many_arguments)]
pub fn kalman_step(
    mean: &[f64],
    cov: &DMatrix<f64>,
    nu: usize,
    t_next: f64,
    h: f64,
    gamma_sq: &[f64],
    problem: &OdeProblem,
    jac: &dyn Fn(&[f64]) -> DMatrix<f64>,
) -> (Vec<f64>, DMatrix<f64>) {
    let r = nu + 1;
    let d = gamma_sq.len();
    let phi = block_diag(&vec![phi_closed(nu, h); d]);
    let q = block_diag(
        &gamma_sq
            .iter()
            .map(|g| sigma_closed(nu, h) * *g)
            .collect::<Vec<_>>(),
    );
    let m_pred = &phi * DVector::from_column_slice(mean);
    let c_pred = &phi * cov * phi.transpose() + q;
    let xi: Vec<f64> = (0..d).map(|i| m_pred[i * r]).collect();
    let fx = problem.eval(t_next, &xi).unwrap();
    let j = jac(&xi);
    let mut hm = DMatrix::zeros(d, d * r);
    for i in 0..d {
        hm[(i, i * r + 1)] = 1.0;
        for k in 0..d {
            hm[(i, k * r)] -= j[(i, k)];
        }
    }
    let z = DVector::from_fn(d, |i, _| m_pred[i * r + 1] - fx[i]);
    let s = &hm * &c_pred * hm.transpose();
    let s_inv = s.clone().try_inverse().expect("innovation invertible");
    let k = &c_pred * hm.transpose() * s_inv;
    let m = &m_pred - &k * z;
    let c = &c_pred - &k * s * k.transpose();
    let c = (&c + c.transpose()) * 0.5;
    (m.as_slice().to_vec(), c)
}

/// Van der Pol pairs with `μ = 1, 2, …`, plus a logistic component when `d` is odd.
pub fn embedded_vanderpol(d: usize) -> OdeProblem {
    let pairs = d / 2;
    let mut y0 = Vec::with_capacity(d);
    for _ in 0..pairs {
        y0.extend([2.0, 0.0]);
    }
    if d % 2 == 1 {
        y0.push(0.5);
    }
    let f = move |_t: f64, y: &[f64], o: &mut [f64]| {
        for k in 0..pairs {
            let mu = 1.0 + k as f64;
            let (a, b) = (y[2 * k], y[2 * k + 1]);
            o[2 * k] = b;
            o[2 * k + 1] = mu * ((1.0 - a * a) * b - a);
        }
        if d % 2 == 1 {
            o[d - 1] = y[d - 1] * (1.0 - y[d - 1]);
        }
    };
    let jac = move |_t: f64, y: &[f64]| {
        let mut j = DMatrix::zeros(d, d);
        for k in 0..pairs {
            let mu = 1.0 + k as f64;
            let (a, b) = (y[2 * k], y[2 * k + 1]);
            j[(2 * k, 2 * k + 1)] = 1.0;
            j[(2 * k + 1, 2 * k)] = mu * (-2.0 * a * b - 1.0);
            j[(2 * k + 1, 2 * k + 1)] = mu * (1.0 - a * a);
        }
        if d % 2 == 1 {
            j[(d - 1, d - 1)] = 1.0 - 2.0 * y[d - 1];
        }
        j
    };
    let diag = move |t: f64, y: &[f64], o: &mut [f64]| {
        let j = jac(t, y);
        for i in 0..d {
            o[i] = j[(i, i)];
        }
    };
    OdeProblem::new(format!("vanderpol-x{d}"), y0, (0.0, 6.3), f)
        .unwrap()
        .with_jac_dense(jac)
        .with_jac_diag(diag)
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

pub fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / (1.0 + y.abs()))
        .fold(0.0, f64::max)
}
