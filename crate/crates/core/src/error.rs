use std::fmt;

/// Row/column extent of a matrix, used in error messages.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shape(pub usize, pub usize);

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.0, self.1)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left} vs {right}")]
    Dimension {
        op: &'static str,
        left: Shape,
        right: Shape,
    },

    #[error("degenerate embedding: row {row} has norm {norm:e}")]
    DegenerateEmbedding { row: usize, norm: f64 },

    #[error("tape state: {0}")]
    TapeState(&'static str),

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("insufficient batch: need at least 2 samples, got {0}")]
    InsufficientBatch(usize),

    /// No anchor in the batch has both a positive and a negative; the
    /// contrastive term is undefined for this batch.
    #[error("no valid contrastive anchors in batch")]
    NoValidAnchors,

    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("manifest fingerprint mismatch: checkpoint has {expected}, manifest has {found}")]
    Fingerprint { expected: String, found: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("coverage error: no observed {modality} vectors for label {label}")]
    Coverage { label: String, modality: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("leakage: test subject `{subject}` has a non-observed {modality} entry")]
    Leakage { subject: String, modality: String },

    #[error("statistics: {0}")]
    Stats(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
