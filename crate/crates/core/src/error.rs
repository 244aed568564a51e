use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("qubit index {index} out of range for a {n_qubits}-qubit register")]
    QubitOutOfRange { index: usize, n_qubits: usize },

    #[error("control and target must differ (both are qubit {0})")]
    QubitCollision(usize),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("amplitude array length {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("circuit needs at least 2 qubits, got {0}")]
    TooFewQubits(usize),

    #[error("cannot build an amplitude tree from an all-zero vector")]
    ZeroVector,

    #[error("tree node at level {level}, index {index} has zero mass")]
    ZeroNode { level: usize, index: usize },

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("unknown entity id {0}")]
    UnknownEntity(usize),

    #[error("unknown predicate id {0}")]
    UnknownPredicate(usize),

    #[error("unknown name `{0}`")]
    UnknownName(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("{path}:{line}: malformed triple line: {reason}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("operation not supported for model kind {0}")]
    UnsupportedModel(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint checksum mismatch")]
    ChecksumMismatch,

    #[error("checkpoint format version {found} not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("instance too large for dense simulation: {0} amplitudes")]
    TooLarge(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
