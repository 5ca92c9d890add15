use thiserror::Error;

use crate::tasks::idx::IdxError;

pub type Result<T> = std::result::Result<T, SeqPenError>;

#[derive(Debug, Error)]
pub enum SeqPenError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("sample {sample} out of range (N = {num_samples})")]
    SampleOutOfRange { sample: usize, num_samples: usize },

    #[error("non-finite objective value at sample {sample}")]
    NonFiniteObjective { sample: usize },

    #[error("non-finite constraint value at sample {sample}, constraint {constraint}")]
    NonFiniteConstraint { sample: usize, constraint: usize },

    #[error("non-finite iterate at iteration {iteration}, coordinate {coordinate}")]
    NonFiniteIterate { iteration: usize, coordinate: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("probe box has zero volume along coordinate {coordinate}")]
    DegenerateBox { coordinate: usize },

    #[error("every probe point had a near-zero penalty gradient")]
    AllProbesSkipped,

    #[error("no feasible KKT point found among {tried} active sets")]
    NoKktPoint { tried: usize },

    #[error("forward cache does not belong to the supplied parameters")]
    StaleCache,

    #[error("empty dataset")]
    EmptyDataset,

    #[error(transparent)]
    Idx(#[from] IdxError),
}

pub(crate) fn invalid(msg: impl Into<String>) -> SeqPenError {
    SeqPenError::InvalidArgument(msg.into())
}
