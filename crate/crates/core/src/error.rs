use thiserror::Error;

use crate::model::ValidationReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(ValidationReport),

    #[error("coordinate index {index} outside 3..={n}")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("point has {got} coordinates, model dimension is {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("{what} = {value} is outside the admissible domain ({domain})")]
    Domain {
        what: &'static str,
        value: f64,
        domain: String,
    },

    #[error("invalid phase: {0}")]
    InvalidPhase(String),

    #[error("invalid device configuration: {0}")]
    InvalidDevices(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("quadrature did not converge: error estimate {achieved:e} exceeds target {target:e}")]
    Quadrature { achieved: f64, target: f64 },

    #[error("device parameters could not be certified: {0}")]
    NotCertified(String),

    #[error("newton iteration failed: {0}")]
    Solver(String),

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn domain(what: &'static str, value: f64, domain: impl Into<String>) -> Error {
    Error::Domain {
        what,
        value,
        domain: domain.into(),
    }
}
