use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed document {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: &'static str, id: u64 },

    #[error("dangling image reference: annotation {annotation} points at image {image_id}")]
    DanglingImage { annotation: u64, image_id: u64 },

    #[error("dangling category reference: annotation {annotation} points at category {category_id}")]
    DanglingCategory { annotation: u64, category_id: u64 },

    #[error("invalid image record {id}: {reason}")]
    InvalidImage { id: u64, reason: String },

    #[error("invalid category {id}: {reason}")]
    InvalidCategory { id: u64, reason: String },

    #[error("annotation {annotation} has a bbox outside its image after clamping")]
    BoxOutOfBounds { annotation: u64 },

    #[error("degenerate box {w}x{h}: {context}")]
    DegenerateBox { w: f64, h: f64, context: &'static str },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected:?}, got {actual:?} ({context})")]
    DimensionMismatch {
        expected: (u32, u32),
        actual: (u32, u32),
        context: &'static str,
    },

    #[error("split with val_fraction {val_fraction} over {images} images leaves one side empty")]
    EmptySplit { val_fraction: f64, images: usize },

    #[error("no ground truth annotations to evaluate against")]
    NoGroundTruth,

    #[error("prompt template is missing the {{class_name}} placeholder")]
    MissingPlaceholder,

    #[error("category name is empty")]
    EmptyCategoryName,

    #[error("instance count must be non-negative, got {0}")]
    NegativeCount(i64),

    #[error("manifest needs at least one synthetic dataset")]
    EmptyDatasetList,

    #[error("backend request {request} failed: {source}")]
    Backend {
        request: String,
        #[source]
        source: BackendError,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json { path: path.into(), source }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image { path: path.into(), source }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub fn is_backend(&self) -> bool {
        matches!(self, Error::Backend { .. })
    }
}

/// Failures talking to a generation backend.
#[derive(Debug, Error)]
pub enum BackendError {
    #[error("timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },

    #[error("connection failed after {attempts} attempt(s): {message}")]
    Connection { attempts: u32, message: String },

    #[error("service returned HTTP {status} after {attempts} attempt(s): {body}")]
    Status { status: u16, attempts: u32, body: String },

    #[error("could not decode service payload: {0}")]
    Decode(String),

    #[error("backend output is {actual:?}, request was {expected:?}")]
    Dimensions { expected: (u32, u32), actual: (u32, u32) },

    #[error("invalid request: {0}")]
    InvalidRequest(String),
}
