use std::path::PathBuf;

/// Error type for fallible library operations: file formats, configuration,
/// and training-time failures. Shape errors in tensor code are programming
/// bugs and panic instead.
#[derive(Debug, thiserror::Error)]
pub enum SldsError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("unknown config keys: {}", keys.join(", "))]
    ConfigKeys { keys: Vec<String> },

    #[error("bad config value for `{key}`: {msg}")]
    ConfigValue { key: String, msg: String },

    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },

    #[error("checkpoint config mismatch: {msg}")]
    ConfigMismatch { msg: String },

    #[error("non-finite gradient for parameter `{name}`")]
    NonFiniteGrad { name: String },

    #[error("training diverged at epoch {epoch}, story {story}: {diagnostics}")]
    Diverged {
        epoch: usize,
        story: usize,
        diagnostics: String,
    },

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, SldsError>;

impl SldsError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SldsError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        SldsError::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
