//! The same Lorenz96 solve in each covariance layout.
//!
//! Kronecker and block-diagonal EK0 carry the same posterior as dense EK0, so the
//! final means agree to rounding while the cost per step differs by orders of magnitude.

use std::time::Instant;

use odefilter::solver::TimeGrid;
use odefilter::{problems, SolverConfig};

fn main() -> odefilter::Result<()> {
    let problem = problems::lorenz96(64, 8.0)?.with_span(0.0, 1.0)?;
    let reference = {
        let cfg = SolverConfig::variant("ek0-dense", 3)?.with_grid(TimeGrid::FixedSteps(200));
        odefilter::solve(&problem, &cfg)?.final_mean()
    };
    for name in ["ek0-dense", "ek0-blockdiag", "ek0-kronecker"] {
        let cfg = SolverConfig::variant(name, 3)?.with_grid(TimeGrid::FixedSteps(200));
        let start = Instant::now();
        let sol = odefilter::solve(&problem, &cfg)?;
        let elapsed = start.elapsed().as_secs_f64();
        let diff = sol
            .final_mean()
            .iter()
            .zip(&reference)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        println!(
            "{name:>14}: {:8.2} ms, max |mean - dense| {diff:.1e}",
            elapsed * 1e3
        );
    }
    Ok(())
}
