use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("matrix is not a rigid transform: {0}")]
    InvalidTransform(String),
    #[error("degenerate slice pose: {0}")]
    DegeneratePose(String),
    #[error("volume affine is singular")]
    SingularAffine,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("corrupt NIfTI header: {0}")]
    CorruptHeader(String),
    #[error("malformed transform CSV: {0}")]
    MalformedCsv(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("degenerate metric input: {0}")]
    DegenerateInput(String),
    #[error("evaluation region is empty")]
    EmptyRegion,
    #[error("mask is empty")]
    EmptyMask,

    #[error("history is at its boundary")]
    AtBoundary,
    #[error("no scored entries in history")]
    NoScores,

    #[error("malformed configuration: {0}")]
    MalformedConfig(String),
    #[error("missing configuration field `{0}`")]
    MissingField(String),
    #[error("bad pattern for `{field}`: {message}")]
    BadPattern { field: String, message: String },
    #[error("pattern `{field}` lacks capture group `{group}`")]
    MissingCaptureGroup { field: String, group: String },
    #[error("no files in the dataset matched the configured patterns")]
    EmptyDataset,
    #[error("case `{case_id}` is incomplete: missing {role}")]
    IncompleteCase { case_id: String, role: String },
    #[error("ambiguous match: {0}")]
    AmbiguousMatch(String),
    #[error("unknown case `{0}`")]
    UnknownCase(String),
    #[error("unknown slice `{0}`")]
    UnknownSlice(String),

    #[error("case `{case_id}`: {source}")]
    InCase {
        case_id: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_case(case_id: &str, source: Error) -> Self {
        Error::InCase {
            case_id: case_id.to_string(),
            source: Box::new(source),
        }
    }

    /// Innermost error, looking through case context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::InCase { source, .. } => source.root(),
            other => other,
        }
    }
}
