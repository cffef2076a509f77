use std::path::PathBuf;

/// Errors produced by the mapping toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("config parse error at line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("image {width}x{height} too small: need at least {min_width}x{min_height} for {levels} pyramid levels of {patch_size}px patches")]
    ImageTooSmall {
        width: usize,
        height: usize,
        min_width: usize,
        min_height: usize,
        levels: usize,
        patch_size: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),

    #[error("pixel ({u}, {v}) outside {width}x{height} image")]
    PixelOutOfBounds {
        u: f64,
        v: f64,
        width: usize,
        height: usize,
    },

    #[error("patch has insufficient image coverage ({coverage:.3} < {required:.3})")]
    InsufficientCoverage { coverage: f64, required: f64 },

    #[error("keyframe {index} already processed or out of order (last {last})")]
    KeyframeOrder { index: u64, last: u64 },

    #[error("scene geometry out of view at frame {frame}: {reason}")]
    SceneOutOfView { frame: usize, reason: String },

    #[error("frame index {index} out of range (sequence has {frames} frames)")]
    FrameOutOfRange { index: usize, frames: usize },

    #[error("reference is empty")]
    EmptyReference,

    #[error("map is empty")]
    EmptyMap,

    #[error("trajectory parse error at line {line}: {message}")]
    TrajectoryParse { line: usize, message: String },

    #[error("frame/pose alignment failed: {0}")]
    Alignment(String),

    #[error("no files match pattern `{0}`")]
    NoFiles(String),

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("image error for {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("I/O error for {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("mapping worker failed: {0}")]
    Worker(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Whether the error stems from bad input data rather than a bug or
    /// resource failure inside the toolkit.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Worker(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
