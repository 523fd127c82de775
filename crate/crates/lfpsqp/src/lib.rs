//! Feasible-iterate nonlinear optimization on implicitly defined
//! constraint manifolds.
//!
//! This crate minimizes a smooth objective subject to nonlinear equality
//! constraints, bounded nonlinear inequality constraints, and box
//! constraints, keeping **every** iterate feasible to a user tolerance.
//! Inequalities become slack equalities and each box constraint becomes a
//! one-dimensional line, parabola, or circle equality, so the solver only
//! ever walks on an equality manifold. Each outer iteration factors the
//! constraint Jacobian once (a thin SVD, `O(n m^2)`), proposes a
//! projected-gradient or inexact-Newton step in the tangent space
//! (projected conjugate gradient with negative-curvature detection), and
//! retracts the step back onto the manifold with `O(nm)` inner iterations
//! (Broyden orthographic or quadratic-penalty projection).
//!
//! Because iterates stay feasible, the objective itself is the merit
//! function, early termination still returns a usable point, and
//! objectives that are only defined on the feasible set stay well posed.
//! Degenerate (linearly dependent) constraints are handled through the
//! numerical rank of the factorization.
//!
//! ```
//! use lfpsqp::{solve, DVector, ProblemSpec, SolveOptions};
//!
//! // Minimize the Rayleigh quotient of diag(2, 1) on the unit circle.
//! let spec = ProblemSpec::new(2, |x| x[0] * x[0] + 0.5 * x[1] * x[1])
//!     .with_equalities(1, |x| DVector::from_element(1, x.dot(x) - 1.0));
//! let x0 = DVector::from_vec(vec![0.8, 0.6]);
//! let result = solve(spec, &x0, &SolveOptions::default()).unwrap();
//! assert!(result.status.is_converged());
//! assert!((result.x_final[0].abs() - 0.0).abs() < 1e-3);
//! ```

pub mod bench;
pub mod deriv;
pub mod direction;
mod error;
pub mod factor;
pub mod linesearch;
pub mod problem;
pub mod retract;
pub mod solver;

pub use error::{Error, Result};
pub use nalgebra::{DMatrix, DVector};
pub use problem::{transform, AugmentedPoint, ProblemSpec, TransformedProblem};
pub use solver::{
    solve, DirectionChoice, SolveOptions, SolveResult, SolveStatus, TraceRecord,
};

pub use direction::DirectionKind;
pub use linesearch::{LineSearchConfig, LineSearchMethod};
pub use retract::{RetractionConfig, RetractionVariant};
