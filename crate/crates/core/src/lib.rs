//! Probabilistic ODE solvers built on Gaussian filtering.
//!
//! The solution of `dy/dt = f(t, y)` is modelled by a ν-times integrated
//! Wiener process; each step predicts, linearizes the ODE around the
//! prediction and conditions on a zero defect. Covariances are carried as
//! square roots in one of three layouts:
//!
//! | layout          | linearizations          | cost per step |
//! |-----------------|-------------------------|---------------|
//! | Kronecker       | EK0                     | `O(d ν²)` plus one `f` evaluation |
//! | block-diagonal  | EK0, diagonal EK1       | `O(d ν³)` |
//! | dense           | EK0, diagonal EK1, EK1  | `O(d³ ν³)` |
//!
//! ```
//! use odefilter::{problems, solver::{solve, SolverConfig}};
//!
//! let problem = problems::vanderpol(1.0).unwrap();
//! let cfg = SolverConfig::variant("ek1-diag", 3).unwrap().with_tolerances(1e-6, 1e-6);
//! let sol = solve(&problem, &cfg).unwrap();
//! assert_eq!(sol.final_state.t, problem.tmax);
//! ```

pub mod adapt;
pub mod calibrate;
pub mod error;
pub mod harness;
pub mod init;
pub mod linearize;
pub mod prior;
pub mod problems;
pub mod solver;
pub mod stepper;
pub mod structmat;

pub use error::{Error, Result};
pub use linearize::LinearizationStrategy;
pub use problems::OdeProblem;
pub use solver::{solve, SolverConfig};
pub use stepper::{GaussianState, Structure};
