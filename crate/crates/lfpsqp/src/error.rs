//! Crate-wide error type.

/// Errors produced by problem validation, factorization, step generation,
/// retraction, and the outer solver loop.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A lower bound exceeds the matching upper bound.
    #[error("infeasible bounds at index {index}: lower {lower} > upper {upper}")]
    InfeasibleBounds { index: usize, lower: f64, upper: f64 },

    /// A two-sided bound pair is too narrow for the box transformation to
    /// stay numerically full-rank.
    #[error("degenerate box at index {index}: width {width} is below the rank tolerance")]
    DegenerateBox { index: usize, width: f64 },

    /// The initial point violates the constraints beyond tolerance and could
    /// not be recovered by a zero-step projection.
    #[error("infeasible starting point: {0}")]
    InfeasibleStart(String),

    /// A derivative evaluation produced NaN or infinity.
    #[error("non-finite derivative in {op}")]
    NonFiniteDerivative { op: &'static str },

    /// A dense factorization failed to converge.
    #[error("linear algebra failure: {0}")]
    LinAlgFailure(String),

    /// The projected conjugate gradient detected an inconsistent projected
    /// system (r.g <= 0); the caller should fall back to a gradient step.
    #[error("indefinite projected system in conjugate gradient")]
    IndefiniteProjection,

    /// An inner retraction loop hit its iteration cap or a singular update.
    #[error("retraction failed to converge within {iters} inner iterations")]
    RetractionDiverged { iters: usize },

    /// A coordinate-wise retraction had no real solution.
    #[error("coordinate retraction failed at index {index}")]
    CoordinateRetractFailed { index: usize },

    /// No acceptable step length was found.
    #[error("line search failed after {backtracks} trial steps")]
    LineSearchFailed { backtracks: usize },

    /// A callback returned a vector or matrix of unexpected size.
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
