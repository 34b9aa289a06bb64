//! Initial derivatives from a short bootstrap and a smoothing pass.
//!
//! For Van der Pol the first two derivatives at t0 are known in closed form.

use odefilter::init::{initialize, InitPlan};
use odefilter::SolverConfig;
use odefilter::{problems, Structure};

fn main() -> odefilter::Result<()> {
    let problem = problems::vanderpol(2.0)?;
    let nu = 4;
    let cfg = SolverConfig::variant("ek1-dense", nu)?;
    let prior = cfg.prior(problem.dim())?;
    let plan = InitPlan::for_problem(&problem, nu)?;
    let state = initialize(&problem, &prior, &plan, Structure::Dense)?;

    let (x, v, mu) = (problem.y0[0], problem.y0[1], 2.0);
    let dv = mu * ((1.0 - x * x) * v - x);
    let ddx = dv;
    let ddv = mu * (-2.0 * x * v * v + (1.0 - x * x) * dv - v);
    println!("init dt {:.3e}", plan.dt);
    for q in 0..=nu {
        println!(
            "q = {q}: mean {:?} std {:?}",
            state.coord(q),
            state.coord_std(q)
        );
    }
    println!("exact second derivative: [{ddx}, {ddv}]");
    Ok(())
}
