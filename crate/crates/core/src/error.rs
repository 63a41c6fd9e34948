use std::io;

use thiserror::Error;

use crate::tensor::GraphError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Graph(#[from] GraphError),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("mixing matrix is rank deficient (rank {rank} < {sources} sources)")]
    RankDeficient { rank: usize, sources: usize },

    #[error("fold sets overlap on fold {0}")]
    OverlappingFolds(u8),

    #[error("{group} label index {index} out of range for vocabulary of {size}")]
    LabelOutOfRange { group: &'static str, index: usize, size: usize },

    #[error("patient {patient} appears in folds {a} and {b}")]
    PatientLeak { patient: u64, a: u8, b: u8 },

    #[error("bad magic: expected \"MIDT\", found {0:?}")]
    BadMagic(String),

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("payload length mismatch: expected {expected} bytes, found {actual}")]
    PayloadLength { expected: usize, actual: usize },

    #[error("lead {0} is constant; correlation undefined")]
    ConstantLead(usize),

    #[error("matrix is not symmetric at ({0}, {1})")]
    Asymmetric(usize, usize),

    #[error("non-finite loss at step {step}")]
    NonFinite { step: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("both classes must be present")]
    SingleClass,

    #[error("classifier has not been trained")]
    Untrained,

    #[error("insufficient folds: {0}")]
    InsufficientFolds(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
