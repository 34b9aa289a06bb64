//! Diffusion calibration: time-varying or time-constant, one scale or one per dimension.
//!
//! Local per-dimension estimates follow each component's latest defect and can spread
//! over orders of magnitude; the time-constant ones average that out. The printed
//! values are the final diffusion estimates.

use odefilter::calibrate::GammaSq;
use odefilter::{problems, SolverConfig};

fn summary(g: &[f64]) -> String {
    let lo = g.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = g.iter().copied().fold(0.0, f64::max);
    format!("min {lo:.3e}, max {hi:.3e}")
}

fn main() -> odefilter::Result<()> {
    let problem = problems::lorenz96(10, 8.0)?.with_span(0.0, 2.0)?;
    for mode in ["tv-scalar", "tv-vector", "tc-scalar", "tc-vector"] {
        let cfg = SolverConfig::variant("ek1-diag", 3)?
            .with_diffusion(mode)?
            .with_tolerances(1e-6, 1e-6);
        let sol = odefilter::solve(&problem, &cfg)?;
        let last = sol.records.last().expect("a solve keeps its final point");
        let posthoc = match &sol.posthoc_gamma {
            Some(GammaSq::Scalar(g)) => format!("post-hoc {g:.3e}"),
            Some(GammaSq::Vector(v)) => format!("post-hoc {}", summary(v)),
            None => "local".to_string(),
        };
        println!(
            "{mode:>9}: {:4} steps, final gamma {}, {posthoc}, mean std {:.2e}",
            sol.stats.n_accepted,
            summary(&last.gamma),
            last.y_std.iter().sum::<f64>() / last.y_std.len() as f64
        );
    }
    Ok(())
}
