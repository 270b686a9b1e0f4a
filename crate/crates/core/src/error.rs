use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// The feeder description is electrically or topologically invalid.
    #[error("feeder model: {0}")]
    Model(String),

    /// A configuration value is out of range or inconsistent.
    #[error("config `{path}`: {message}")]
    Config { path: String, message: String },

    /// Matrix or vector dimensions do not line up.
    #[error("dimension mismatch: {0}")]
    Shape(String),

    /// A caller handed in a value that violates an operation's contract.
    #[error("contract violation: {0}")]
    Contract(String),

    /// An iterative method ran out of iterations.
    #[error("{method} did not converge after {iterations} iterations (residual {residual:.3e})")]
    Convergence {
        method: &'static str,
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    /// NaN/inf or an eigensolver failure. `dump` carries the offending matrix.
    #[error("numerical failure in {context}")]
    Numerical { context: String, dump: String },

    /// Rank-1 recovery on a matrix with no positive eigenvalue.
    #[error("degenerate matrix: largest eigenvalue {0:.3e} is not positive")]
    Degenerate(f64),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code for the CLI: 2 config, 3 convergence, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Parse { .. } | Error::Model(_) => 2,
            Error::Convergence { .. } => 3,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
