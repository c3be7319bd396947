use std::path::PathBuf;

/// Errors produced by the splatting engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid rotation: quaternion has zero norm")]
    InvalidRotation,
    #[error("invalid direction: zero-length view vector")]
    InvalidDirection,
    #[error("insufficient points: need at least {needed}, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("stale cache: {0}")]
    StaleCache(String),
    #[error("band not found: {0}")]
    BandNotFound(String),
    #[error("band index {index} out of range for {count} bands")]
    BadBandIndex { index: usize, count: usize },
    #[error("index {index} out of range for {len} primitives")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("image {width}x{height} is smaller than the {window}x{window} window")]
    ImageTooSmall { width: usize, height: usize, window: usize },
    #[error("undefined spectrum: {0}")]
    UndefinedSpectrum(&'static str),
    #[error("no signal: {0}")]
    NoSignal(&'static str),
    #[error("empty view set")]
    EmptyViews,
    #[error("unsupported camera model: {0}")]
    UnsupportedModel(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("parse error in {file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint truncated: {0}")]
    Truncated(String),
    #[error("checkpoint checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    Checksum { stored: u32, computed: u32 },
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("image decode {path}: {msg}")]
    Image { path: PathBuf, msg: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    /// Short machine-parseable class name.
    pub fn class(&self) -> &'static str {
        match self {
            Error::InvalidRotation => "invalid-rotation",
            Error::InvalidDirection => "invalid-direction",
            Error::InsufficientPoints { .. } => "insufficient-points",
            Error::DimensionMismatch(_) => "dimension-mismatch",
            Error::StaleCache(_) => "stale-cache",
            Error::BandNotFound(_) => "band-not-found",
            Error::BadBandIndex { .. } => "bad-band-index",
            Error::IndexOutOfRange { .. } => "index-out-of-range",
            Error::ImageTooSmall { .. } => "image-too-small",
            Error::UndefinedSpectrum(_) => "undefined-spectrum",
            Error::NoSignal(_) => "no-signal",
            Error::EmptyViews => "empty-views",
            Error::UnsupportedModel(_) => "unsupported-model",
            Error::Manifest(_) => "manifest",
            Error::Parse { .. } => "parse",
            Error::Config(_) => "config",
            Error::Version { .. } => "version",
            Error::Truncated(_) => "truncated",
            Error::Checksum { .. } => "checksum",
            Error::Format(_) => "format",
            Error::Numeric(_) => "numeric",
            Error::Image { .. } => "image",
            Error::Io { .. } => "io",
        }
    }

    /// True for failures caused by the numbers rather than the inputs on disk.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Numeric(_)
                | Error::InvalidRotation
                | Error::InvalidDirection
                | Error::UndefinedSpectrum(_)
                | Error::NoSignal(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
