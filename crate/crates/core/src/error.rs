use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: right endpoint {b} must exceed left endpoint {a}")]
    InvalidDomain { a: f64, b: f64 },
    #[error("invalid grid: need at least one interval, got {grid}")]
    InvalidGrid { grid: usize },
    #[error("non-finite input: {0}")]
    NonFiniteInput(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),
    #[error("network has no hidden layers")]
    NoHiddenLayers,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("empty input")]
    EmptyInput,
    #[error("ROC-AUC needs both classes present")]
    SingleClassAuc,
    #[error("cost matrix is not square ({rows}x{cols})")]
    NonSquare { rows: usize, cols: usize },
    #[error("spline specs differ between networks")]
    SpecMismatch,
    #[error("networks have inconsistent dims")]
    InconsistentDims,
    #[error("feature length mismatch: config expects {expected}, graph has {got}")]
    FeatureLengthMismatch { expected: usize, got: usize },
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported format version {0}")]
    VersionUnsupported(u32),
    #[error("truncated payload")]
    TruncatedPayload,
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("model `{model}` cannot be used here: {reason}")]
    IncompatibleModel { model: String, reason: String },
    #[error("computation graph contains a cycle")]
    CycleDetected,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
