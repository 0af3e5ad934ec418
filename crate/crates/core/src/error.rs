use crate::solver::SolverError;

/// Crate-wide error type. The CLI maps `Input`/`Io` to exit code 1 and
/// `Solve`/`Internal` to exit code 2.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),
    #[error(transparent)]
    Solve(#[from] SolverError),
    #[error("audit failure: {0}")]
    Audit(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for errors caused by the caller's data rather than by a solve.
    pub fn is_input(&self) -> bool {
        matches!(self, Error::Input(_) | Error::Io { .. })
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Input(format!("csv: {e}"))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
