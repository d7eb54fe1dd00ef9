use std::path::PathBuf;

/// Errors raised by the simulator and its experiment harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("conductance {value:.4e} S outside model range [{min:.4e}, {max:.4e}] S")]
    ConductanceOutOfRange { value: f64, min: f64, max: f64 },

    #[error("time-constant lines are parallel and never intersect")]
    ParallelLines,

    #[error("regression needs at least two distinct conductances")]
    SingularDesign,

    #[error("invalid argument: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed {kind} file {path}: {reason}")]
    Format {
        kind: &'static str,
        path: PathBuf,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
