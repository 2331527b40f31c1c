//! Crate-wide error type.
//!
//! Every variant carries a stable string code (see [`Error::code`]) and maps
//! onto a process exit code by error class (see [`Error::exit_code`]), so the
//! CLI can surface the originating failure without string matching.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed volume header: {0}")]
    MalformedHeader(String),

    #[error("payload size mismatch: expected {expected} bytes, found {actual}")]
    PayloadSize { expected: usize, actual: usize },

    #[error("unknown dtype {0:?}")]
    UnknownDtype(String),

    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("anomaly does not fit: {0}")]
    AnomalyDoesNotFit(String),

    #[error("cannot split lung mask: {0}")]
    CannotSplit(String),

    #[error("segmentation failed: {0}")]
    Segmentation(String),

    #[error("empty region: {0}")]
    EmptyRegion(String),

    #[error("image smaller than patch: {0}")]
    ImageTooSmall(String),

    #[error("malformed memory bank: {0}")]
    BankFormat(String),

    #[error("extractor mismatch: bank built with {expected}, scoring with {found}")]
    ExtractorMismatch { expected: String, found: String },

    #[error("projection mismatch: {0}")]
    ProjectionMismatch(String),

    #[error("missing or mismatched projection sidecar: {0}")]
    Sidecar(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("insufficient cases: {0}")]
    InsufficientCases(String),

    #[error("single-class input: {0}")]
    SingleClass(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable identifier of the failure.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "E_IO",
            Error::MalformedHeader(_) => "E_HEADER",
            Error::PayloadSize { .. } => "E_PAYLOAD_SIZE",
            Error::UnknownDtype(_) => "E_DTYPE",
            Error::InvalidVolume(_) => "E_VOLUME",
            Error::DimMismatch(_) => "E_DIM_MISMATCH",
            Error::InvalidArgument(_) => "E_ARGUMENT",
            Error::Manifest(_) => "E_MANIFEST",
            Error::AnomalyDoesNotFit(_) => "E_ANOMALY_FIT",
            Error::CannotSplit(_) => "E_CANNOT_SPLIT",
            Error::Segmentation(_) => "E_SEGMENTATION",
            Error::EmptyRegion(_) => "E_EMPTY_REGION",
            Error::ImageTooSmall(_) => "E_IMAGE_TOO_SMALL",
            Error::BankFormat(_) => "E_BANK_FORMAT",
            Error::ExtractorMismatch { .. } => "E_EXTRACTOR_MISMATCH",
            Error::ProjectionMismatch(_) => "E_PROJECTION_MISMATCH",
            Error::Sidecar(_) => "E_SIDECAR",
            Error::Config(_) => "E_CONFIG",
            Error::InsufficientCases(_) => "E_INSUFFICIENT_CASES",
            Error::SingleClass(_) => "E_SINGLE_CLASS",
            Error::Json(_) => "E_JSON",
        }
    }

    /// Process exit code for the error's class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 2,
            Error::MalformedHeader(_)
            | Error::PayloadSize { .. }
            | Error::UnknownDtype(_)
            | Error::BankFormat(_)
            | Error::Manifest(_)
            | Error::Sidecar(_)
            | Error::Json(_) => 3,
            Error::Config(_) | Error::ExtractorMismatch { .. } | Error::ProjectionMismatch(_) => 4,
            Error::InvalidVolume(_)
            | Error::DimMismatch(_)
            | Error::InvalidArgument(_)
            | Error::ImageTooSmall(_)
            | Error::EmptyRegion(_) => 5,
            Error::AnomalyDoesNotFit(_) | Error::CannotSplit(_) | Error::Segmentation(_) => 6,
            Error::InsufficientCases(_) | Error::SingleClass(_) => 7,
        }
    }
}
