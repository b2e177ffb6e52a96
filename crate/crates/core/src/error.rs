use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite entry in {what} at index {index}")]
    NonFiniteEntry { what: &'static str, index: usize },

    #[error("problem must have at least one row and one column")]
    EmptyProblem,

    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),

    #[error("matrix is not symmetric (relative asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("linear solve broke down (relative residual {residual:.3e}, regularization {regularization:.3e})")]
    Breakdown { residual: f64, regularization: f64 },

    #[error("zero cost entries present but gamma is zero")]
    ZeroCostNeedsGamma,

    #[error("negative cost at coordinate {index} requires a variable bound")]
    MissingBound { index: usize },

    #[error("linear solve failed at iteration {iter}: {source}")]
    LinSolveFailure {
        iter: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("initial point has non-positive entry {value} at index {index}")]
    NonPositiveInit { index: usize, value: f64 },

    #[error("kernel produced a non-finite value at ({row}, {col})")]
    KernelDegenerate { row: usize, col: usize },

    #[error("class {0} has no samples")]
    EmptyClass(usize),

    #[error("sink {sink} is unreachable from source {origin}")]
    Unreachable { origin: usize, sink: usize },

    #[error("vertex enumeration too large: {bases} bases over {columns} columns")]
    TooLarge { bases: u128, columns: usize },

    #[error("no nonnegative basic solution exists")]
    InfeasibleDetected,

    #[error("unbounded LP detected at column {column}")]
    UnboundedUnsupported { column: usize },

    #[error("invalid instance: {0}")]
    InvalidInstance(String),
}

pub type Result<T> = std::result::Result<T, Error>;
