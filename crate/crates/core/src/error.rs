use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("unknown shape class `{name}` (valid: {})", valid.join(", "))]
    UnknownClass { name: String, valid: Vec<String> },

    #[error("caption template error: {0}")]
    Template(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate feature: pre-normalization norm {norm:e} below 1e-12")]
    DegenerateFeature { norm: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training diverged at step {step}: loss is {loss}")]
    Divergence { step: u64, loss: f64 },

    #[error("record `{id}`: {source}")]
    Record {
        id: String,
        #[source]
        source: Box<Error>,
    },

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

    pub fn format(offset: usize, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Error::Config(message.into())
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }
}
