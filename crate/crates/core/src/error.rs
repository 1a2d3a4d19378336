use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("no frame files in {0}")]
    EmptyDirectory(PathBuf),

    #[error("frame {path} is {found_w}x{found_h}, expected {expected_w}x{expected_h}")]
    FrameDimensions {
        path: PathBuf,
        expected_w: u32,
        expected_h: u32,
        found_w: u32,
        found_h: u32,
    },

    #[error("frame file {0} is not named by a numeric frame index")]
    FrameName(PathBuf),

    #[error("manifest {path} line {line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("shape mismatch for {what}: expected {expected}, found {found}")]
    Shape {
        what: String,
        expected: String,
        found: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("backward called without a cached forward pass")]
    MissingCache,

    #[error("non-finite loss at epoch {epoch} step {step} (gradient norm {grad_norm})")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        grad_norm: f64,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape(what: impl Into<String>, expected: impl ToString, found: impl ToString) -> Self {
        Error::Shape {
            what: what.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    /// Short machine-readable category used by the command-line error prefix.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
            Error::EmptyDirectory(_) => "empty-directory",
            Error::FrameDimensions { .. } => "dimension-mismatch",
            Error::FrameName(_) => "frame-name",
            Error::Manifest { .. } => "manifest",
            Error::Shape { .. } => "shape",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Config(_) => "config",
            Error::Checkpoint(_) => "checkpoint",
            Error::MissingCache => "missing-cache",
            Error::NonFiniteLoss { .. } => "non-finite-loss",
        }
    }
}
