//! Error against a tight reference versus wall time on the Pleiades problem.
//!
//! The reference is computed first and takes a few seconds.

use odefilter::harness::{run_work_precision, WorkPrecisionOptions};

fn main() -> odefilter::Result<()> {
    let output = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "work_precision.csv".into());
    let opts = WorkPrecisionOptions {
        tols: vec![1e-3, 1e-5, 1e-7],
        reference_steps: 400_000,
        parallel: true,
        ..Default::default()
    };
    for row in run_work_precision(&opts, output.as_ref())? {
        println!(
            "{:>14} rtol {:.0e}: rmse {:.2e} in {:6} steps, {:.3} s",
            row.solver, row.rtol, row.rmse_final, row.n_steps, row.wall_seconds
        );
    }
    Ok(())
}
