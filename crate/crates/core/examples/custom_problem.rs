//! A user-defined ODE with a hand-written Jacobian, solved on a fixed grid.
//!
//! The logistic equation has a closed-form solution, so the printed error is exact.

use nalgebra::DMatrix;
use odefilter::solver::TimeGrid;
use odefilter::{OdeProblem, SolverConfig};

fn exact(t: f64) -> f64 {
    0.1 * t.exp() / (1.0 - 0.1 + 0.1 * t.exp())
}

fn main() -> odefilter::Result<()> {
    let problem = OdeProblem::new(
        "logistic",
        vec![0.1],
        (0.0, 5.0),
        |_t, y: &[f64], out: &mut [f64]| {
            out[0] = y[0] * (1.0 - y[0]);
        },
    )?
    .with_jac_dense(|_t, y: &[f64]| DMatrix::from_element(1, 1, 1.0 - 2.0 * y[0]))
    .with_jac_diag(|_t, y: &[f64], out: &mut [f64]| out[0] = 1.0 - 2.0 * y[0]);

    for n in [10, 20, 40, 80] {
        let cfg = SolverConfig::variant("ek1-dense", 2)?.with_grid(TimeGrid::FixedSteps(n));
        let sol = odefilter::solve(&problem, &cfg)?;
        let last = sol.records.last().expect("a solve keeps its final point");
        println!(
            "n = {n:3}: error {:9.2e}, reported std {:9.2e}",
            (last.y_mean[0] - exact(last.t)).abs(),
            last.y_std[0]
        );
    }
    Ok(())
}
