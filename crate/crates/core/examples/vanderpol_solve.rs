//! Adaptive solve of Van der Pol with a calibrated error bar on every saved point.
//!
//! ```text
//! cargo run --release --example vanderpol_solve
//! ```

use odefilter::{problems, SolverConfig};

fn main() -> odefilter::Result<()> {
    let problem = problems::vanderpol(1.0)?;
    let mut cfg = SolverConfig::variant("ek1-diag", 3)?.with_tolerances(1e-6, 1e-6);
    cfg.save_every = 25;
    let sol = odefilter::solve(&problem, &cfg)?;

    println!("{:>8} {:>12} {:>10}", "t", "y[0]", "std[0]");
    for r in &sol.records {
        println!("{:8.3} {:12.6} {:10.2e}", r.t, r.y_mean[0], r.y_std[0]);
    }
    println!(
        "{} accepted, {} rejected, {:.1} ms",
        sol.stats.n_accepted,
        sol.stats.n_rejected,
        sol.stats.wall_seconds * 1e3
    );
    Ok(())
}
