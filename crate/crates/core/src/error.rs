use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid pose: {0}")]
    InvalidPose(String),

    #[error("invalid scale: s_h={s_h}, s_w={s_w} (both must be positive)")]
    InvalidScale { s_h: f64, s_w: f64 },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid K={k} for {n} samples")]
    InvalidK { k: usize, n: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },

    #[error("training diverged at epoch {epoch}: non-finite {what}")]
    TrainingDiverged { epoch: usize, what: &'static str },

    #[error("point ({x}, {y}) outside {width}x{height} image")]
    OutOfBounds {
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },

    #[error("invalid feature vector: {0}")]
    InvalidFeature(String),

    #[error("frame {frame}: missing {which} score")]
    IncompleteScoring { frame: u64, which: &'static str },

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("precision undefined: {0}")]
    UndefinedPrecision(String),

    #[error("{path}: line {line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: checksum mismatch (expected {expected}, found {found})")]
    Checksum {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("record {id}: cannot move from {from} to {to}")]
    IllegalTransition {
        id: u64,
        from: &'static str,
        to: &'static str,
    },

    #[error("{0}: locked by another writer (remove the .lock file if stale)")]
    Locked(PathBuf),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// True for failures caused by non-finite numbers during optimization.
    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::TrainingDiverged { .. })
    }
}
