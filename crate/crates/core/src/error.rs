use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate quaternion")]
    DegenerateQuaternion,

    #[error("grid too coarse: m_per_dim = {0}, need at least 2")]
    GridTooCoarse(usize),

    #[error("empty orientation grid")]
    EmptyGrid,

    #[error("invalid kernel parameters: {0}")]
    InvalidKernel(String),

    #[error("invalid activations: {0}")]
    InvalidActivations(String),

    #[error("indeterminate average: top eigenvalues differ by {gap:e}")]
    IndeterminateAverage { gap: f64 },

    #[error("empty label list")]
    EmptyLabels,

    #[error("undefined relative error: ground-truth translation has zero norm")]
    UndefinedRelativeError,

    #[error("degenerate keypoint set: triangle area {area:e} m^2")]
    DegenerateKeypoints { area: f64 },

    #[error("zero ground-truth range")]
    ZeroRange,

    #[error("empty record list")]
    EmptyRecords,

    #[error("bin edges must be strictly increasing")]
    InvalidEdges,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("record {record}: missing key `{key}`")]
    MissingKey { record: usize, key: String },

    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),

    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
