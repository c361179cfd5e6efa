use thiserror::Error;

/// Everything that can go wrong in the library.
///
/// Verification routines never fail because a witness is infeasible; they
/// return a report with a verdict. Errors are reserved for inputs that violate
/// an operation's preconditions.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not Hermitian (deviation {0:.3e})")]
    NotHermitian(f64),
    #[error("graph is not connected")]
    Disconnected,
    #[error("chain is not reversible (detailed-balance deviation {0:.3e})")]
    NotReversible(f64),
    #[error("chain is not irreducible")]
    NotIrreducible,
    #[error("net-flow cannot be routed: component {component} carries net {net:.3e}")]
    CrossComponent { component: usize, net: f64 },
    #[error("distributions overlap on vertex {0}")]
    OverlappingSupport(String),
    #[error("infeasible input: {0}")]
    InfeasibleInput(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("scaling matrix is singular (smallest singular value {0:.3e})")]
    SingularScaling(f64),
    #[error("invalid witness: {0}")]
    InvalidWitness(String),
    #[error("marked fraction of input {input} is {found}, expected {expected}")]
    FractionMismatch {
        input: String,
        found: f64,
        expected: f64,
    },
    #[error("schedule has {have} entries but the trace needs {need}")]
    ScheduleMismatch { have: usize, need: usize },
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("cut does not separate input {0}")]
    NotCut(String),
    #[error("unsupported hyperedge shape: {0}")]
    UnsupportedShape(String),
    #[error("terminals are not connected for input {0}")]
    NotConnected(String),
    #[error("output labels disagree: {0}")]
    OutputMismatch(String),
    #[error("witness family is not orthogonal: residual {0:.3e}")]
    NotOrthogonal(f64),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("solver did not converge after {iterations} iterations (gap {gap:.3e})")]
    NoConvergence { iterations: usize, gap: f64 },
    #[error("invalid coloring: {0}")]
    InvalidColoring(String),
    #[error("invalid weighting scheme: {0}")]
    InvalidScheme(String),
    #[error("support violation: {0}")]
    SupportViolation(String),
    #[error("resistances are not normalized: {0}")]
    NotNormalized(String),
    #[error("input {0} does not have a unique marked element")]
    NotUnique(String),
    #[error("the all-zero input has no marked index")]
    AllZeroInput,
    #[error("input values are not distinct: {0}")]
    NotDistinct(String),
}

pub type Result<T> = std::result::Result<T, Error>;
