use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot read wav {path}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error("unsupported audio encoding in {path}: {detail}")]
    UnsupportedEncoding { path: PathBuf, detail: String },

    #[error("empty audio stream in {0}")]
    EmptyAudio(PathBuf),

    #[error("invalid audio: {0}")]
    InvalidAudio(String),

    #[error("sample {value} at frame {frame}, channel {channel} is outside [-1, 1]")]
    SampleOutOfRange {
        frame: usize,
        channel: usize,
        value: f64,
    },

    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("{component}: {source}")]
    Feature {
        component: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("training failed: {0}")]
    Training(String),

    #[error("model: {0}")]
    Model(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_component(self, component: &'static str) -> Self {
        Error::Feature {
            component,
            source: Box::new(self),
        }
    }
}

macro_rules! ensure_arg {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::InvalidArgument(format!($($fmt)+)));
        }
    };
}
pub(crate) use ensure_arg;
