//! Constructive local existence for 1D diagonal quasilinear hyperbolic
//! systems, run as a numerical method.
//!
//! The pipeline is:
//!
//! 1. [`problem`]: parse and validate `u_t + diag(λ(x,t,u)) u_x = h(x,t,u)`,
//!    `u(x, 0) = ū(x)` on `[a, b]`.
//! 2. [`determinacy`]: estimate the data bounds, the slope barrier and the
//!    existence time `T`, which fix the trapezoid on which the solution is
//!    determined by the initial data.
//! 3. [`iteration`]: freeze the coefficients at the previous iterate, solve
//!    the resulting semilinear problem along backward characteristics
//!    ([`characteristics`]), repeat until the successive differences vanish,
//!    and compare them with the factorial convergence bound.
//! 4. [`verify`]: closed-form test problems, domain-of-dependence checks and
//!    grid-convergence studies.

pub mod characteristics;
pub mod determinacy;
pub mod expr;
pub mod iteration;
pub mod problem;
pub mod verify;

pub use characteristics::{CharacteristicTrace, GridParams, IterateField, TraceError};
pub use determinacy::{DeterminacyConstants, EstimateOptions, Trapezoid};
pub use expr::{parse, Expr, Var};
pub use iteration::{solve, BoundReport, ConvergenceReport, Solution, SolveError, SolveOptions};
pub use problem::{AdmissibleBox, ProblemSpec, ValidationReport};
