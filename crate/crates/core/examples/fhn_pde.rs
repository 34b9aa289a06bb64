//! FitzHugh–Nagumo on a 2-D grid with a Kronecker-structured EK0, trajectory as JSON lines.
//!
//! ```text
//! cargo run --release --example fhn_pde -- 32 fhn.jsonl
//! ```

use std::collections::BTreeMap;

use odefilter::harness::run_solve;
use odefilter::SolverConfig;

fn main() -> odefilter::Result<()> {
    let mut args = std::env::args().skip(1);
    let grid: f64 = args.next().and_then(|g| g.parse().ok()).unwrap_or(16.0);
    let output = args.next().unwrap_or_else(|| "fhn.jsonl".into());

    let params = BTreeMap::from([("grid".to_string(), grid)]);
    let mut cfg = SolverConfig::variant("ek0-kronecker", 2)?.with_tolerances(1e-6, 1e-6);
    cfg.save_every = 100;
    let (sol, meta) = run_solve("fhn", &params, 0, &cfg, output.as_ref())?;

    let last = sol.records.last().expect("a solve keeps its final point");
    let m = last.y_mean.len() / 2;
    let mean_u = last.y_mean[..m].iter().sum::<f64>() / m as f64;
    let max_std = last.y_std.iter().copied().fold(0.0, f64::max);
    println!(
        "d = {}: {} steps in {:.2} s, mean u(t = {}) {mean_u:.4}, max std {max_std:.2e}",
        meta.dim, meta.n_accepted, meta.wall_seconds, last.t
    );
    println!("{} records written to {output}", sol.records.len());
    Ok(())
}
