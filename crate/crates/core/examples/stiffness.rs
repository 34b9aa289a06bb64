//! Accepted steps on Van der Pol as μ grows.
//!
//! EK0 has no Jacobian information and its step count follows the stiffness; the
//! EK1 variants stay nearly flat.

use odefilter::harness::{stiffness, StiffnessOptions};

fn main() -> odefilter::Result<()> {
    let opts = StiffnessOptions {
        mus: vec![1.0, 10.0, 100.0],
        parallel: true,
        ..Default::default()
    };
    println!(
        "{:>14} {:>8} {:>10} {:>10}",
        "solver", "mu", "accepted", "rejected"
    );
    for row in stiffness(&opts)? {
        println!(
            "{:>14} {:8.0e} {:10} {:10}",
            row.solver, row.mu, row.n_accepted, row.n_rejected
        );
    }
    Ok(())
}
