use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the engine can report.
///
/// [`Error::is_io`] separates filesystem failures from validation failures so
/// the command-line front end can map them to distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed document: {0}")]
    Malformed(String),

    #[error("duplicate attribute `{0}`")]
    DuplicateAttribute(String),

    #[error("unknown region `{0}`")]
    UnknownRegion(String),

    #[error("unknown category `{0}`")]
    UnknownCategory(String),

    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),

    #[error("cycle detected in region composition: {0}")]
    CycleDetected(String),

    #[error("attribute `{attribute}` reaches region `{declared}` directly but `{via}` through category `{category}`")]
    AmbiguousPath {
        attribute: String,
        category: String,
        declared: String,
        via: String,
    },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("feature dimension {0} is not divisible by 4")]
    IndivisibleDimension(usize),

    #[error("probability {value} at index {index} of `{image_id}` lies outside [0, 1]")]
    ProbabilityRange {
        image_id: String,
        index: usize,
        value: f64,
    },

    #[error("label {value} at index {index} of `{image_id}` is not 0 or 1")]
    InvalidLabel {
        image_id: String,
        index: usize,
        value: u8,
    },

    #[error("duplicate image id `{0}`")]
    DuplicateImageId(String),

    #[error("unknown split tag `{0}`")]
    UnknownSplit(String),

    #[error("descriptor `{0}` carries no attribute labels")]
    MissingLabels(String),

    #[error("descriptor `{0}` carries no attribute probabilities")]
    MissingProbabilities(String),

    #[error("training data has fewer than two identities; no negatives can be sampled")]
    NoNegatives,

    #[error("training data has no identity with two or more images; no positives can be sampled")]
    NoPositives,

    #[error("attribute classifier groups do not cover the ontology: {0}")]
    Coverage(String),

    #[error("threshold {0} lies outside the open interval (0, 1)")]
    InvalidThreshold(f64),

    #[error("threshold grid is empty")]
    EmptyGrid,

    #[error("ontology checksum mismatch: {context} expects {expected}, found {found}")]
    ChecksumMismatch {
        context: String,
        expected: String,
        found: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }

    pub(crate) fn dims(context: impl Into<String>, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected,
            found,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Malformed(err.to_string())
    }
}
