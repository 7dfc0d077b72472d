use std::path::PathBuf;

/// Errors produced anywhere in the sensing chain.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("size limit exceeded: {0}")]
    Size(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Echoes of consecutive frames would overlap in the fiber.
    #[error("shot overlap: {0}")]
    Overlap(String),

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("profiles out of order: {0}")]
    Ordering(String),

    #[error("empty window: {0}")]
    EmptyWindow(String),

    #[error("nothing detected: {0}")]
    Detection(String),

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    /// Physically infeasible scenario (zero pad, shot rate, gauge placement).
    #[error("physics validation failed at `{key}`: {message}")]
    Physics { key: String, message: String },

    #[error("trace format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn physics(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Physics {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
