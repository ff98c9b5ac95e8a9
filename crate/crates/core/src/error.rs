use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid classification label {0} (expected -1 or +1)")]
    InvalidLabel(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty dataset or support")]
    Empty,

    #[error("no support point has finite transport cost to the sample")]
    NoFiniteCost,

    #[error("split produced an empty partition ({0})")]
    EmptyPartition(&'static str),

    #[error("distribution is not normalized (total mass {0})")]
    NotNormalized(f64),

    #[error("instance too large: {size} LP variables exceeds the cap of {cap}")]
    CapExceeded { size: usize, cap: usize },

    #[error("lambda bracket expansion failed after {0} doublings")]
    BracketFailure(usize),

    #[error("iterate became non-finite at iteration {0}")]
    Diverged(usize),

    #[error("iteration cap of {0} reached before convergence")]
    IterationCap(usize),

    #[error("failed to converge: {0}")]
    NonConvergence(&'static str),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("cross-validation fold {fold} has only {size} examples")]
    FoldTooSmall { fold: usize, size: usize },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
