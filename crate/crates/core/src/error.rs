use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by loading, geometry, propagation and mining.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed header: {reason}")]
    MalformedHeader { line: usize, reason: String },

    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: usize, reason: String },

    #[error("line {line}: expected {expected} values, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("line {line}: non-finite value `{token}`")]
    NonFinite { line: usize, token: String },

    #[error("invalid sample id `{0}`")]
    InvalidSampleId(String),

    #[error("duplicate sample id `{0}`")]
    DuplicateSampleId(String),

    #[error("unknown sample id `{0}`")]
    UnknownSampleId(String),

    #[error("class index {class} out of range for {num_classes} classes (sample `{id}`)")]
    ClassOutOfRange {
        id: String,
        class: usize,
        num_classes: usize,
    },

    #[error("sample `{0}` is already labeled")]
    AlreadyLabeled(String),

    #[error("sample `{0}` is not unlabeled")]
    NotUnlabeled(String),

    #[error("sample-id sets differ: {0}")]
    IdSetMismatch(String),

    #[error("invalid label vector: {0}")]
    InvalidLabelVector(String),

    #[error("target dimension {target} exceeds input dimension {dim}")]
    TargetDimTooLarge { target: usize, dim: usize },

    #[error("dimension mismatch: {0}")]
    ShapeMismatch(String),

    #[error("need K < n, got K={k} with n={n}")]
    NeighborCountTooLarge { k: usize, n: usize },

    #[error("degenerate geometry: every sample coincides with all of its neighbors")]
    DegenerateGeometry,

    #[error("no labeled samples available")]
    NoLabeledSamples,

    #[error("covariance denominator must be positive, got {0}")]
    NonPositiveDenominator(f64),

    #[error("numeric degeneracy: {0}")]
    NumericDegeneracy(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("feature provider yielded fewer than two spaces")]
    ProviderTooShort,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
