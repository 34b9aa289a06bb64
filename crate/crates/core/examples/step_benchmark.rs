//! Median single-step times on Lorenz96, written as CSV.
//!
//! ```text
//! cargo run --release --example step_benchmark -- steps.csv
//! ```

use odefilter::harness::{loglog_slope, run_bench_step, BenchStepOptions};

fn main() -> odefilter::Result<()> {
    let output = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "steps.csv".into());
    let opts = BenchStepOptions {
        dims: vec![16, 32, 64, 128],
        orders: vec![2],
        ..Default::default()
    };
    let rows = run_bench_step(&opts, output.as_ref())?;
    for solver in &opts.solvers {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| &r.solver == solver)
            .filter_map(|r| r.median_seconds.map(|s| (r.d as f64, s)))
            .collect();
        println!("{solver:>14}: log-log slope {:.2}", loglog_slope(&pts));
    }
    println!("rows written to {output}");
    Ok(())
}
