use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    // --- word table ---
    #[error("word table line {line}: {msg}")]
    ParseLine { line: usize, msg: String },
    #[error("word table line {line}: expected {expected} components, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("word table line {line}: duplicate token `{token}`")]
    DuplicateToken { line: usize, token: String },
    #[error("word table is empty")]
    EmptyWordTable,
    #[error("no token of the sentence is in the word table")]
    EmptySentence,

    // --- frame-feature files ---
    #[error("{path}: bad magic, not a VFEA file")]
    BadMagic { path: PathBuf },
    #[error("{path}: expected {expected} bytes of payload, found {found}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },
    #[error("{path}: header declares an empty matrix (rows={rows}, dim={dim})")]
    EmptyMatrix { path: PathBuf, rows: u32, dim: u32 },

    // --- manifests ---
    #[error("manifest line {line}: {msg}")]
    ManifestParse { line: usize, msg: String },
    #[error("manifest line {line}: unknown split `{value}`")]
    UnknownSplit { line: usize, value: String },
    #[error("manifest line {line}: duplicate id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("manifest line {line}: item `{id}` has an empty caption")]
    EmptyCaption { line: usize, id: String },

    // --- shapes and numeric domains ---
    #[error("{context}: expected dimension {expected}, found {found}")]
    DimMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("matrix must have at least one row")]
    EmptyMatrixRows,
    #[error("matrix contains a non-finite value")]
    NonFiniteValue,
    #[error("stride must be at least 1")]
    InvalidStride,
    #[error("embedding is degenerate: pre-normalization norm {norm:e} below threshold")]
    DegenerateEmbedding { norm: f64 },
    #[error("margin must be nonnegative, got {value}")]
    InvalidMargin { value: f64 },
    #[error("score matrix must be square, got {rows}x{cols}")]
    NonSquareScores { rows: usize, cols: usize },
    #[error("score entry ({row},{col}) = {value} is positive; order similarity is a negative penalty")]
    PositiveScore {
        row: usize,
        col: usize,
        value: f64,
    },

    // --- training ---
    #[error("batch of size {size} has no contrastive terms; need at least 2 samples")]
    BatchTooSmall { size: usize },
    #[error("sample {index} of the batch produced a degenerate embedding; batch rejected: {source}")]
    DegenerateSample {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("clip threshold must be positive, got {value}")]
    InvalidThreshold { value: f64 },
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    // --- evaluation / test building ---
    #[error("{what} must be non-empty")]
    EmptyInput { what: &'static str },
    #[error("videos and captions differ in length: {videos} vs {captions}")]
    LengthMismatch { videos: usize, captions: usize },
    #[error("a multiple-choice question needs exactly 5 choices, got {found}")]
    ChoiceCount { found: usize },
    #[error("caption `{caption_id}`: only {eligible} eligible distractors, need {needed}")]
    InsufficientDistractors {
        caption_id: String,
        eligible: usize,
        needed: usize,
    },

    // --- checkpoints ---
    #[error("{path}: {msg}")]
    CheckpointFormat { path: PathBuf, msg: String },
    #[error("checkpoint is missing tensor `{name}`")]
    MissingTensor { name: String },
    #[error("unknown architecture `{value}`")]
    UnknownArch { value: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
