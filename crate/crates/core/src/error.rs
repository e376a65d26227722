use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the pipeline.
///
/// Every variant maps to a stable machine-readable code (see [`Error::code`])
/// and a process exit category (see [`Error::exit_code`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("point is behind the camera (depth {depth})")]
    BehindCamera { depth: f64 },
    #[error("pixel ({u}, {v}) outside {width}x{height} image")]
    OutOfBounds { u: i64, v: i64, width: usize, height: usize },
    #[error("line segment lies entirely outside the image")]
    EmptyRegion,
    #[error("plane vertex projects behind the camera")]
    ProjectionDegenerate,
    #[error("degenerate segment (length {length})")]
    DegenerateSegment { length: f64 },
    #[error("map shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("need at least 2 surface samples, got {0}")]
    TooFewSamples(usize),
    #[error("non-finite gradient for plane {0}")]
    NaNGradient(u64),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("invalid box dimensions or camera count: {0}")]
    BadDims(String),
    #[error("invalid view: {0}")]
    InvalidView(String),
    #[error("config: {0}")]
    Config(String),
    #[error("missing depth map {0}")]
    MissingDepth(PathBuf),
    #[error("missing normal map {0}")]
    MissingNormal(PathBuf),
    #[error("missing camera file {0}")]
    MissingCamera(PathBuf),
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::BehindCamera { .. } => "E_BEHIND_CAMERA",
            Error::OutOfBounds { .. } => "E_OUT_OF_BOUNDS",
            Error::EmptyRegion => "E_EMPTY_REGION",
            Error::ProjectionDegenerate => "E_PROJECTION_DEGENERATE",
            Error::DegenerateSegment { .. } => "E_DEGENERATE_SEGMENT",
            Error::ShapeMismatch(_) => "E_SHAPE_MISMATCH",
            Error::TooFewSamples(_) => "E_TOO_FEW_SAMPLES",
            Error::NaNGradient(_) => "E_NAN_GRADIENT",
            Error::EmptyInput(_) => "E_EMPTY_INPUT",
            Error::BadDims(_) => "E_BAD_DIMS",
            Error::InvalidView(_) => "E_INVALID_VIEW",
            Error::Config(_) => "E_CONFIG",
            Error::MissingDepth(_) => "E_MISSING_DEPTH",
            Error::MissingNormal(_) => "E_MISSING_NORMAL",
            Error::MissingCamera(_) => "E_MISSING_CAMERA",
            Error::MissingFile(_) => "E_MISSING_FILE",
            Error::Parse { .. } => "E_PARSE",
            Error::Io { .. } => "E_IO",
        }
    }

    /// 2 validation, 3 I/O, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::MissingDepth(_)
            | Error::MissingNormal(_)
            | Error::MissingCamera(_)
            | Error::MissingFile(_)
            | Error::Io { .. } => 3,
            Error::NaNGradient(_) | Error::TooFewSamples(_) => 4,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
