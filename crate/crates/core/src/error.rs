use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// Variant names double as the machine-readable `code` in the CLI and HTTP
/// error payloads, see [`Error::code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {reason}")]
    UnreadableFile { path: PathBuf, reason: String },
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("tile size {0} is below the minimum of 8")]
    InvalidTileSize(u32),
    #[error("inconsistent tile grid: {0}")]
    InconsistentGrid(String),
    #[error("tile coordinate ({row}, {col}) outside a {rows}x{cols} grid")]
    OutOfBounds { row: u32, col: u32, rows: u32, cols: u32 },

    #[error("invalid extraction parameters: {0}")]
    InvalidParams(String),
    #[error("degenerate polygon: {0}")]
    DegeneratePolygon(String),

    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("non-finite loss at step {step}: {details}")]
    NonFiniteLoss { step: usize, details: String },
    #[error("feature dimensions {got:?} do not match checkpoint dimensions {expected:?}")]
    DimMismatch { expected: (u32, u32), got: (u32, u32) },
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("mask out of bounds: {0}")]
    MaskOutOfBounds(String),
    #[error("expected a {expected} feature image, got {got}")]
    WrongFeatureKind { expected: &'static str, got: &'static str },

    #[error("window of {window} px does not fit a {height}x{width} image")]
    WindowTooLarge { window: usize, height: u32, width: u32 },

    #[error("object scorer unavailable: {0}")]
    ScorerUnavailable(String),
    #[error("manifest needs both forged and pristine training images: {0}")]
    DegenerateManifest(String),
    #[error("ROC needs both classes present")]
    SingleClass,
    #[error("classification backbone unavailable: {0}")]
    BackboneUnavailable(String),
    #[error("need at least {min} images, got {got}")]
    TooFewImages { min: usize, got: usize },

    #[error("no annotation file under {0}")]
    MissingAnnotations(PathBuf),
    #[error("no images under {0}")]
    EmptyDirectory(PathBuf),
    #[error("removal job {job_id} failed: {reason}")]
    JobFailed { job_id: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),
    #[error("weights archive: {0}")]
    Weights(String),
}

impl Error {
    /// Stable identifier for the error kind.
    pub fn code(&self) -> &'static str {
        match self {
            Error::UnreadableFile { .. } => "UnreadableFile",
            Error::UnsupportedFormat(_) => "UnsupportedFormat",
            Error::InvalidTileSize(_) => "InvalidTileSize",
            Error::InconsistentGrid(_) => "InconsistentGrid",
            Error::OutOfBounds { .. } => "OutOfBounds",
            Error::InvalidParams(_) => "InvalidParams",
            Error::DegeneratePolygon(_) => "DegeneratePolygon",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::EmptyTrainingSet => "EmptyTrainingSet",
            Error::NonFiniteLoss { .. } => "NonFiniteLoss",
            Error::DimMismatch { .. } => "DimMismatch",
            Error::CheckpointMismatch(_) => "CheckpointMismatch",
            Error::MaskOutOfBounds(_) => "MaskOutOfBounds",
            Error::WrongFeatureKind { .. } => "WrongFeatureKind",
            Error::WindowTooLarge { .. } => "WindowTooLarge",
            Error::ScorerUnavailable(_) => "ScorerUnavailable",
            Error::DegenerateManifest(_) => "DegenerateManifest",
            Error::SingleClass => "SingleClass",
            Error::BackboneUnavailable(_) => "BackboneUnavailable",
            Error::TooFewImages { .. } => "TooFewImages",
            Error::MissingAnnotations(_) => "MissingAnnotations",
            Error::EmptyDirectory(_) => "EmptyDirectory",
            Error::JobFailed { .. } => "JobFailed",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
            Error::Image(_) => "Image",
            Error::Weights(_) => "Weights",
        }
    }
}
