use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library. Numeric payloads are reported in `f64`
/// regardless of the scalar type used for the computation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {block}: expected {expected:?}, found {found:?}")]
    Dimension {
        block: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("closed loop is not stable (spectral abscissa {abscissa:e})")]
    Unstable { abscissa: f64 },

    #[error("(jw I - A) is singular at w = {omega:e}")]
    PoleOnAxis { omega: f64 },

    #[error("norm bisection did not converge: bracket [{lo:e}, {hi:e}] after {iterations} iterations")]
    NoConvergence { lo: f64, hi: f64, iterations: usize },

    #[error("step t = {step:e} leaves the set of stabilizing controllers")]
    LeftStabilizingSet { step: f64 },

    #[error("{0}")]
    Domain(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
