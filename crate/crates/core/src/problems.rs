//! Initial value problems and the benchmark registry.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// `f(t, y, out)`; writes `dy/dt` into `out`.
pub type VectorField = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
/// Full Jacobian `∂f/∂y`.
pub type DenseJacobian = Arc<dyn Fn(f64, &[f64]) -> DMatrix<f64> + Send + Sync>;
/// Diagonal of `∂f/∂y`, written into `out`.
pub type DiagJacobian = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// `dy/dt = f(t, y)`, `y(t0) = y0`, on `[t0, tmax]`.
#[derive(Clone)]
pub struct OdeProblem {
    pub name: String,
    pub y0: Vec<f64>,
    pub t0: f64,
    pub tmax: f64,
    pub params: BTreeMap<String, f64>,
    /// Free-form facts worth recording next to results (boundary conditions, ordering).
    pub notes: BTreeMap<String, String>,
    f: VectorField,
    jac_dense: Option<DenseJacobian>,
    jac_diag: Option<DiagJacobian>,
}

impl fmt::Debug for OdeProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OdeProblem")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .field("span", &(self.t0, self.tmax))
            .field("params", &self.params)
            .field("jac_dense", &self.jac_dense.is_some())
            .field("jac_diag", &self.jac_diag.is_some())
            .finish()
    }
}

impl OdeProblem {
    pub fn new(
        name: impl Into<String>,
        y0: Vec<f64>,
        span: (f64, f64),
        f: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Result<Self> {
        let (t0, tmax) = span;
        if y0.is_empty() {
            return Err(Error::InvalidArgument(
                "initial value must be non-empty".into(),
            ));
        }
        if !(t0.is_finite() && tmax.is_finite() && tmax > t0) {
            return Err(Error::InvalidArgument(format!(
                "invalid time span [{t0}, {tmax}]"
            )));
        }
        Ok(Self {
            name: name.into(),
            y0,
            t0,
            tmax,
            params: BTreeMap::new(),
            notes: BTreeMap::new(),
            f: Arc::new(f),
            jac_dense: None,
            jac_diag: None,
        })
    }

    pub fn with_jac_dense(
        mut self,
        j: impl Fn(f64, &[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.jac_dense = Some(Arc::new(j));
        self
    }

    pub fn with_jac_diag(
        mut self,
        j: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.jac_diag = Some(Arc::new(j));
        self
    }

    pub fn without_jacobians(mut self) -> Self {
        self.jac_dense = None;
        self.jac_diag = None;
        self
    }

    pub fn with_span(mut self, t0: f64, tmax: f64) -> Result<Self> {
        if !(t0.is_finite() && tmax.is_finite() && tmax > t0) {
            return Err(Error::InvalidArgument(format!(
                "invalid time span [{t0}, {tmax}]"
            )));
        }
        self.t0 = t0;
        self.tmax = tmax;
        Ok(self)
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn with_note(mut self, key: &str, value: &str) -> Self {
        self.notes.insert(key.to_string(), value.to_string());
        self
    }

    pub fn dim(&self) -> usize {
        self.y0.len()
    }

    pub fn has_jac_dense(&self) -> bool {
        self.jac_dense.is_some()
    }

    pub fn has_jac_diag(&self) -> bool {
        self.jac_diag.is_some()
    }

    /// Writes `f(t, y)` into `out`. Fails on non-finite output.
    pub fn eval_into(&self, t: f64, y: &[f64], out: &mut [f64]) -> Result<()> {
        (self.f)(t, y, out);
        if out.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFiniteField { t })
        }
    }

    pub fn eval(&self, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(t, y, &mut out)?;
        Ok(out)
    }

    pub fn jac_dense(&self, t: f64, y: &[f64]) -> Option<DMatrix<f64>> {
        self.jac_dense.as_ref().map(|j| j(t, y))
    }

    pub fn jac_diag(&self, t: f64, y: &[f64]) -> Option<Vec<f64>> {
        self.jac_diag.as_ref().map(|j| {
            let mut out = vec![0.0; y.len()];
            j(t, y, &mut out);
            out
        })
    }
}

/// Lorenz96 with `n ≥ 4` cyclically coupled states and forcing `F`.
pub fn lorenz96(n: usize, forcing: f64) -> Result<OdeProblem> {
    if n < 4 {
        return Err(Error::InvalidArgument(format!(
            "lorenz96 needs n >= 4, got {n}"
        )));
    }
    let mut y0 = vec![forcing; n];
    y0[0] = forcing + 0.01;
    let f = move |_t: f64, y: &[f64], out: &mut [f64]| {
        let n = y.len();
        out[0] = (y[1] - y[n - 2]) * y[n - 1] - y[0] + forcing;
        out[1] = (y[2] - y[n - 1]) * y[0] - y[1] + forcing;
        for i in 2..n - 1 {
            out[i] = (y[i + 1] - y[i - 2]) * y[i - 1] - y[i] + forcing;
        }
        out[n - 1] = (y[0] - y[n - 3]) * y[n - 2] - y[n - 1] + forcing;
    };
    let jac = |_t: f64, y: &[f64]| {
        let n = y.len();
        let mut j = DMatrix::zeros(n, n);
        for i in 0..n {
            let (p1, m1, m2) = ((i + 1) % n, (i + n - 1) % n, (i + n - 2) % n);
            j[(i, p1)] += y[m1];
            j[(i, m2)] -= y[m1];
            j[(i, m1)] += y[p1] - y[m2];
            j[(i, i)] -= 1.0;
        }
        j
    };
    Ok(OdeProblem::new("lorenz96", y0, (0.0, 30.0), f)?
        .with_jac_dense(jac)
        .with_jac_diag(|_t, _y, out: &mut [f64]| out.iter_mut().for_each(|v| *v = -1.0))
        .with_param("n", n as f64)
        .with_param("forcing", forcing))
}

const PLEIADES_STARS: usize = 7;

/// Seven-body planar gravitation problem, state `(x, y, v, w)`.
pub fn pleiades() -> OdeProblem {
    let y0 = [
        [3.0, 3.0, -1.0, -3.0, 2.0, -2.0, 2.0],
        [3.0, -3.0, 2.0, 0.0, 0.0, -4.0, 4.0],
        [0.0, 0.0, 0.0, 0.0, 0.0, 1.75, -1.5],
        [0.0, 0.0, 0.0, -1.25, 1.0, 0.0, 0.0],
    ]
    .concat();
    let f = |_t: f64, s: &[f64], out: &mut [f64]| {
        let n = PLEIADES_STARS;
        let (x, y) = (&s[..n], &s[n..2 * n]);
        out[..2 * n].copy_from_slice(&s[2 * n..]);
        for i in 0..n {
            let (mut ax, mut ay) = (0.0, 0.0);
            for j in 0..n {
                if j != i {
                    let (dx, dy) = (x[j] - x[i], y[j] - y[i]);
                    let r = (dx * dx + dy * dy).powf(1.5);
                    let m = (j + 1) as f64;
                    ax += m * dx / r;
                    ay += m * dy / r;
                }
            }
            out[2 * n + i] = ax;
            out[3 * n + i] = ay;
        }
    };
    let jac = |_t: f64, s: &[f64]| {
        let n = PLEIADES_STARS;
        let (x, y) = (&s[..n], &s[n..2 * n]);
        let mut jm = DMatrix::zeros(4 * n, 4 * n);
        for i in 0..2 * n {
            jm[(i, 2 * n + i)] = 1.0;
        }
        for i in 0..n {
            for j in 0..n {
                if j == i {
                    continue;
                }
                let (dx, dy) = (x[j] - x[i], y[j] - y[i]);
                let q = dx * dx + dy * dy;
                let m = (j + 1) as f64;
                // ∂/∂x_j of m dx q^(-3/2) and friends; the x_i terms are their negatives.
                let a = m * q.powf(-1.5);
                let b = 3.0 * m * q.powf(-2.5);
                let dvx = a - b * dx * dx;
                let dvy = -b * dx * dy;
                let dwy = a - b * dy * dy;
                let (vi, wi) = (2 * n + i, 3 * n + i);
                jm[(vi, j)] += dvx;
                jm[(vi, i)] -= dvx;
                jm[(vi, n + j)] += dvy;
                jm[(vi, n + i)] -= dvy;
                jm[(wi, j)] += dvy;
                jm[(wi, i)] -= dvy;
                jm[(wi, n + j)] += dwy;
                jm[(wi, n + i)] -= dwy;
            }
        }
        jm
    };
    OdeProblem::new("pleiades", y0, (0.0, 3.0), f)
        .expect("static problem definition is valid")
        .with_jac_dense(jac)
        .with_jac_diag(|_t, _y, out: &mut [f64]| out.iter_mut().for_each(|v| *v = 0.0))
        .with_note("state_order", "x,y,v,w")
}

/// Van der Pol oscillator with stiffness `mu`.
pub fn vanderpol(mu: f64) -> Result<OdeProblem> {
    if !(mu.is_finite() && mu > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "vanderpol needs mu > 0, got {mu}"
        )));
    }
    let f = move |_t: f64, y: &[f64], out: &mut [f64]| {
        out[0] = y[1];
        out[1] = mu * ((1.0 - y[0] * y[0]) * y[1] - y[0]);
    };
    let jac = move |_t: f64, y: &[f64]| {
        DMatrix::from_row_slice(
            2,
            2,
            &[
                0.0,
                1.0,
                mu * (-2.0 * y[0] * y[1] - 1.0),
                mu * (1.0 - y[0] * y[0]),
            ],
        )
    };
    let diag = move |_t: f64, y: &[f64], out: &mut [f64]| {
        out[0] = 0.0;
        out[1] = mu * (1.0 - y[0] * y[0]);
    };
    Ok(OdeProblem::new("vanderpol", vec![2.0, 0.0], (0.0, 6.3), f)?
        .with_jac_dense(jac)
        .with_jac_diag(diag)
        .with_param("mu", mu))
}

/// Reaction-diffusion parameters for [`fhn_pde`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FhnParams {
    pub a: f64,
    pub b: f64,
    pub k: f64,
    pub tau: f64,
}

impl Default for FhnParams {
    fn default() -> Self {
        Self {
            a: 208e-4,
            b: 5e-3,
            k: -5e-3,
            tau: 0.1,
        }
    }
}

/// Five-point Laplacian on a `g × g` row-major grid with mirrored (zero-flux) ghost nodes.
pub fn laplacian_2d(u: &[f64], g: usize, inv_dx2: f64, out: &mut [f64]) {
    debug_assert_eq!(u.len(), g * g);
    let nb = |k: usize, step_back: bool| -> usize {
        // Mirror: the ghost beyond index 0 is index 1, beyond g-1 is g-2.
        if step_back {
            if k == 0 {
                1
            } else {
                k - 1
            }
        } else if k == g - 1 {
            g - 2
        } else {
            k + 1
        }
    };
    for r in 0..g {
        let (rn, rs) = (nb(r, true), nb(r, false));
        for c in 0..g {
            let (cw, ce) = (nb(c, true), nb(c, false));
            let centre = u[r * g + c];
            out[r * g + c] = (u[rn * g + c] + u[rs * g + c] + u[r * g + cw] + u[r * g + ce]
                - 4.0 * centre)
                * inv_dx2;
        }
    }
}

/// FitzHugh–Nagumo reaction-diffusion on `[0, 1]²`, discretized on a `g × g` grid.
///
/// State layout: all `u` values row-major, then all `v` values. `d = 2g²`.
pub fn fhn_pde(g: usize, params: FhnParams, seed: u64) -> Result<OdeProblem> {
    if g < 3 {
        return Err(Error::InvalidArgument(format!(
            "fhn grid needs at least 3 points per axis, got {g}"
        )));
    }
    let m = g * g;
    let dx = 1.0 / (g - 1) as f64;
    let inv_dx2 = 1.0 / (dx * dx);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y0: Vec<f64> = (0..2 * m).map(|_| rng.gen_range(0.0..1.0)).collect();
    let FhnParams { a, b, k, tau } = params;
    let f = move |_t: f64, y: &[f64], out: &mut [f64]| {
        let (u, v) = y.split_at(m);
        let (du, dv) = out.split_at_mut(m);
        laplacian_2d(u, g, inv_dx2, du);
        laplacian_2d(v, g, inv_dx2, dv);
        for i in 0..m {
            let (ui, vi) = (u[i], v[i]);
            du[i] = a * du[i] + ui - ui * ui * ui - vi + k;
            dv[i] = (b * dv[i] + ui - vi) / tau;
        }
    };
    let diag = move |_t: f64, y: &[f64], out: &mut [f64]| {
        let cu = -4.0 * a * inv_dx2 + 1.0;
        let cv = (-4.0 * b * inv_dx2 - 1.0) / tau;
        for i in 0..m {
            out[i] = cu - 3.0 * y[i] * y[i];
            out[m + i] = cv;
        }
    };
    let jac = move |_t: f64, y: &[f64]| {
        let mut j = DMatrix::zeros(2 * m, 2 * m);
        let mut unit = vec![0.0; m];
        let mut col = vec![0.0; m];
        for s in 0..m {
            unit[s] = 1.0;
            laplacian_2d(&unit, g, inv_dx2, &mut col);
            unit[s] = 0.0;
            for r in 0..m {
                if col[r] != 0.0 {
                    j[(r, s)] = a * col[r];
                    j[(m + r, m + s)] = b * col[r] / tau;
                }
            }
        }
        for i in 0..m {
            j[(i, i)] += 1.0 - 3.0 * y[i] * y[i];
            j[(i, m + i)] = -1.0;
            j[(m + i, i)] = 1.0 / tau;
            j[(m + i, m + i)] -= 1.0 / tau;
        }
        j
    };
    Ok(OdeProblem::new("fhn", y0, (0.0, 20.0), f)?
        .with_jac_diag(diag)
        .with_jac_dense(jac)
        .with_param("grid", g as f64)
        .with_param("a", a)
        .with_param("b", b)
        .with_param("k", k)
        .with_param("tau", tau)
        .with_param("seed", seed as f64)
        .with_note("boundary", "neumann-mirrored")
        .with_note("state_order", "u-row-major,v-row-major"))
}

/// Replaces the diagonal Jacobian by central differences of `f` with step `eps`.
///
/// Costs `2d` evaluations of `f` per call.
pub fn fd_jacobian_wrapper(problem: OdeProblem, eps: f64) -> Result<OdeProblem> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be positive, got {eps}"
        )));
    }
    let f = Arc::clone(&problem.f);
    let diag = move |t: f64, y: &[f64], out: &mut [f64]| {
        let d = y.len();
        let mut yp = y.to_vec();
        let mut fp = vec![0.0; d];
        let mut fm = vec![0.0; d];
        for i in 0..d {
            yp[i] = y[i] + eps;
            f(t, &yp, &mut fp);
            yp[i] = y[i] - eps;
            f(t, &yp, &mut fm);
            yp[i] = y[i];
            out[i] = (fp[i] - fm[i]) / (2.0 * eps);
        }
    };
    Ok(problem
        .with_jac_diag(diag)
        .with_note("jac_diag", "central-differences"))
}

fn take_param(params: &mut BTreeMap<String, f64>, key: &str, default: f64) -> f64 {
    params.remove(key).unwrap_or(default)
}

fn as_count(value: f64, key: &str) -> Result<usize> {
    if value.is_finite() && value >= 0.0 && value.fract() == 0.0 {
        Ok(value as usize)
    } else {
        Err(Error::InvalidArgument(format!(
            "parameter {key} must be a non-negative integer, got {value}"
        )))
    }
}

/// Names accepted by [`from_registry`].
pub const REGISTRY: [&str; 4] = ["lorenz96", "pleiades", "vanderpol", "fhn"];

/// Builds a named benchmark problem with `key=value` overrides.
///
/// Every problem accepts `t0` and `tmax`. Problem-specific keys:
/// `lorenz96`: `n`, `forcing`; `vanderpol`: `mu`; `fhn`: `grid`, `a`, `b`, `k`, `tau`, `seed`.
pub fn from_registry(name: &str, params: &BTreeMap<String, f64>) -> Result<OdeProblem> {
    let mut p = params.clone();
    let problem = match name {
        "lorenz96" => {
            let n = as_count(take_param(&mut p, "n", 40.0), "n")?;
            lorenz96(n, take_param(&mut p, "forcing", 8.0))?
        }
        "pleiades" => pleiades(),
        "vanderpol" => vanderpol(take_param(&mut p, "mu", 1.0))?,
        "fhn" => {
            let defaults = FhnParams::default();
            let g = as_count(take_param(&mut p, "grid", 16.0), "grid")?;
            let seed = as_count(take_param(&mut p, "seed", 0.0), "seed")? as u64;
            let params = FhnParams {
                a: take_param(&mut p, "a", defaults.a),
                b: take_param(&mut p, "b", defaults.b),
                k: take_param(&mut p, "k", defaults.k),
                tau: take_param(&mut p, "tau", defaults.tau),
            };
            fhn_pde(g, params, seed)?
        }
        other => return Err(Error::UnknownProblem(other.to_string())),
    };
    let t0 = take_param(&mut p, "t0", problem.t0);
    let tmax = take_param(&mut p, "tmax", problem.tmax);
    if let Some(key) = p.keys().next() {
        return Err(Error::InvalidArgument(format!(
            "unknown parameter '{key}' for problem {name}"
        )));
    }
    problem.with_span(t0, tmax)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn fd_dense(p: &OdeProblem, y: &[f64], eps: f64) -> DMatrix<f64> {
        let d = y.len();
        let mut j = DMatrix::zeros(d, d);
        let mut yp = y.to_vec();
        for c in 0..d {
            yp[c] = y[c] + eps;
            let fp = p.eval(0.0, &yp).unwrap();
            yp[c] = y[c] - eps;
            let fm = p.eval(0.0, &yp).unwrap();
            yp[c] = y[c];
            for r in 0..d {
                j[(r, c)] = (fp[r] - fm[r]) / (2.0 * eps);
            }
        }
        j
    }

    fn check_jacobians(p: &OdeProblem, states: impl Iterator<Item = Vec<f64>>) {
        for y in states {
            let fd = fd_dense(p, &y, 1e-6);
            let scale = 1.0 + fd.amax();
            let analytic = p.jac_dense(0.0, &y).unwrap();
            let err = (&analytic - &fd).amax();
            assert!(
                err <= 1e-5 * scale,
                "{}: dense jacobian off by {err}",
                p.name
            );
            let diag = p.jac_diag(0.0, &y).unwrap();
            for i in 0..y.len() {
                assert!(
                    (diag[i] - fd[(i, i)]).abs() <= 1e-5 * scale,
                    "{}: diag {i}",
                    p.name
                );
                assert!((diag[i] - analytic[(i, i)]).abs() <= 1e-12 * (1.0 + diag[i].abs()));
            }
        }
    }

    #[test]
    fn lorenz96_examples() {
        let p = lorenz96(7, 8.0).unwrap();
        assert_eq!(p.eval(0.0, &[8.0; 7]).unwrap(), vec![0.0; 7]);
        assert_eq!(p.y0[0], 8.01);
        let p = lorenz96(4, 0.0).unwrap();
        assert_eq!(
            p.eval(0.0, &[1.0, 0.0, 0.0, 0.0]).unwrap(),
            vec![-1.0, 0.0, 0.0, 0.0]
        );
        assert!(lorenz96(3, 8.0).is_err());
    }

    #[test]
    fn pleiades_initial_state() {
        let p = pleiades();
        assert_eq!(p.dim(), 28);
        assert_eq!(&p.y0[..7], &[3.0, 3.0, -1.0, -3.0, 2.0, -2.0, 2.0]);
        let f = p.eval(0.0, &p.y0).unwrap();
        assert_eq!(&f[..7], &[0.0, 0.0, 0.0, 0.0, 0.0, 1.75, -1.5]);
        assert_eq!((p.t0, p.tmax), (0.0, 3.0));
    }

    #[test]
    fn pleiades_momentum_balance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let y: Vec<f64> = (0..28).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let f = pleiades().eval(0.0, &y).unwrap();
            let (px, py) = (0..7).fold((0.0, 0.0), |(a, b), i| {
                let m = (i + 1) as f64;
                (a + m * f[14 + i], b + m * f[21 + i])
            });
            let scale = f[14..].iter().map(|v| v.abs()).fold(1.0, f64::max);
            assert!(px.abs() < 1e-12 * scale * 28.0 && py.abs() < 1e-12 * scale * 28.0);
        }
    }

    #[test]
    fn vanderpol_examples() {
        let mu = 5.0;
        let p = vanderpol(mu).unwrap();
        assert_eq!(p.eval(0.0, &[2.0, 0.0]).unwrap(), vec![0.0, -2.0 * mu]);
        assert_eq!(p.y0, vec![2.0, 0.0]);
        assert_eq!(p.tmax, 6.3);
        assert_eq!(
            p.jac_dense(0.0, &[2.0, 0.0]).unwrap(),
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -mu, -3.0 * mu])
        );
        assert!(vanderpol(0.0).is_err());
    }

    #[test]
    fn fhn_constant_field_has_no_diffusion() {
        let g = 5;
        let u = vec![0.7; g * g];
        let mut out = vec![1.0; g * g];
        laplacian_2d(&u, g, 16.0, &mut out);
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn fhn_stencil_on_quadratic() {
        let g = 65;
        let dx = 1.0 / (g - 1) as f64;
        let u: Vec<f64> = (0..g * g).map(|k| ((k % g) as f64 * dx).powi(2)).collect();
        let mut out = vec![0.0; g * g];
        laplacian_2d(&u, g, 1.0 / (dx * dx), &mut out);
        for r in 1..g - 1 {
            for c in 1..g - 1 {
                assert!((out[r * g + c] - 2.0).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn fhn_defaults_and_seed() {
        let a = fhn_pde(4, FhnParams::default(), 11).unwrap();
        let b = fhn_pde(4, FhnParams::default(), 11).unwrap();
        assert_eq!(a.dim(), 32);
        assert_eq!(a.y0, b.y0);
        assert!(a.y0.iter().all(|v| (0.0..1.0).contains(v)));
        assert_eq!(
            FhnParams::default(),
            FhnParams {
                a: 208e-4,
                b: 5e-3,
                k: -5e-3,
                tau: 0.1
            }
        );
        assert!(fhn_pde(2, FhnParams::default(), 0).is_err());
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = lorenz96(6, 8.0).unwrap();
        check_jacobians(
            &p,
            (0..10).map(|_| (0..6).map(|_| rng.gen_range(-10.0..10.0)).collect()),
        );
        let p = vanderpol(3.0).unwrap();
        check_jacobians(
            &p,
            (0..10).map(|_| (0..2).map(|_| rng.gen_range(-3.0..3.0)).collect()),
        );
        let p = pleiades();
        check_jacobians(
            &p,
            (0..10).map(|_| (0..28).map(|_| rng.gen_range(-4.0..4.0)).collect()),
        );
        let p = fhn_pde(3, FhnParams::default(), 1).unwrap();
        check_jacobians(
            &p,
            (0..10).map(|_| (0..18).map(|_| rng.gen_range(0.0..1.0)).collect()),
        );
    }

    #[test]
    fn fd_wrapper_examples() {
        let sq = OdeProblem::new(
            "square",
            vec![3.0],
            (0.0, 1.0),
            |_t, y: &[f64], o: &mut [f64]| o[0] = y[0] * y[0],
        )
        .unwrap();
        let w = fd_jacobian_wrapper(sq, 1e-5).unwrap();
        assert!((w.jac_diag(0.0, &[3.0]).unwrap()[0] - 6.0).abs() < 1e-6);

        let lin = OdeProblem::new(
            "lin",
            vec![1.0, 1.0],
            (0.0, 1.0),
            |_t, y: &[f64], o: &mut [f64]| {
                o[0] = 3.0 * y[0] - y[1];
                o[1] = 0.5 * y[1];
            },
        )
        .unwrap();
        let w = fd_jacobian_wrapper(lin, 0.1).unwrap();
        let d = w.jac_diag(0.0, &[2.0, -1.0]).unwrap();
        assert!((d[0] - 3.0).abs() < 1e-14 && (d[1] - 0.5).abs() < 1e-14);

        let vdp = vanderpol(2.0).unwrap();
        let analytic = vdp.jac_diag(0.0, &[0.3, -1.1]).unwrap();
        let w = fd_jacobian_wrapper(vdp.without_jacobians(), 1e-6).unwrap();
        let fd = w.jac_diag(0.0, &[0.3, -1.1]).unwrap();
        assert!((analytic[0] - fd[0]).abs() < 1e-5 && (analytic[1] - fd[1]).abs() < 1e-5);
    }

    #[test]
    fn non_finite_field_reports_time() {
        let p = OdeProblem::new(
            "blowup",
            vec![0.0],
            (0.0, 1.0),
            |_t, _y: &[f64], o: &mut [f64]| o[0] = f64::NAN,
        )
        .unwrap();
        assert_eq!(p.eval(0.25, &[0.0]), Err(Error::NonFiniteField { t: 0.25 }));
    }

    #[test]
    fn registry_overrides() {
        let mut params = BTreeMap::new();
        params.insert("n".to_string(), 8.0);
        params.insert("tmax".to_string(), 2.0);
        let p = from_registry("lorenz96", &params).unwrap();
        assert_eq!((p.dim(), p.tmax), (8, 2.0));
        assert!(matches!(
            from_registry("nope", &BTreeMap::new()),
            Err(Error::UnknownProblem(_))
        ));
        params.insert("bogus".to_string(), 1.0);
        assert!(from_registry("lorenz96", &params).is_err());
        for name in REGISTRY {
            assert!(from_registry(name, &BTreeMap::new()).is_ok());
        }
    }
}
