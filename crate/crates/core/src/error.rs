use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the magnification pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode frame {index} ({}): {message}", path.display())]
    Decode {
        index: usize,
        path: PathBuf,
        message: String,
    },

    #[error("cannot encode frame {index} ({}): {message}", path.display())]
    Encode {
        index: usize,
        path: PathBuf,
        message: String,
    },

    #[error("irregular frame sequence: {0}")]
    Sequence(String),

    #[error("no frames")]
    NoFrames,

    #[error("frame {index}: dimensions {got_width}x{got_height} differ from {width}x{height}")]
    DimensionMismatch {
        index: usize,
        width: usize,
        height: usize,
        got_width: usize,
        got_height: usize,
    },

    #[error("image {width}x{height} is below the 16x16 minimum")]
    TooSmall { width: usize, height: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cardiac frequency unresolvable: {omega} Hz at {fps} fps (Nyquist {nyquist} Hz)", nyquist = fps / 2.0)]
    CardiacFrequencyUnresolvable { fps: f64, omega: f64 },

    #[error("period shorter than one frame")]
    PeriodTooShort,

    #[error("template incomplete: {recorded} of {period} samples")]
    TemplateIncomplete { recorded: usize, period: usize },

    #[error("band shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            what,
            message: message.into(),
        }
    }
}
