use std::path::PathBuf;

use thiserror::Error;

use crate::branching::PartialLog;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Domain(String),

    #[error("flow integration failed from x0={x0} over t={t}: {reason}")]
    Integration { x0: f64, t: f64, reason: String },

    #[error("population exceeded cap of {cap} individuals at t={time}")]
    Explosion {
        cap: usize,
        time: f64,
        partial: Box<PartialLog>,
    },

    #[error("no root of L(q) = 1: {0}")]
    NoRoot(String),

    #[error("finite-difference derivative at y={y} not significantly negative (estimate {estimate}, stderr {stderr})")]
    IllConditionedDerivative { y: f64, estimate: f64, stderr: f64 },

    #[error("harmonic estimate is not positive at x={x} (value {value})")]
    InvalidHarmonic { x: f64, value: f64 },

    #[error("config error in {location}: {message}")]
    Config { location: String, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            location: location.into(),
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

pub type Result<T> = std::result::Result<T, Error>;
