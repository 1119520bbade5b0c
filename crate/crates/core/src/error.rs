use thiserror::Error;

/// Broad classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Format,
    Numerical,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("delay {delta_t} ps is outside the tabulated range [{min}, {max}] ps")]
    OutOfDomain { delta_t: f64, min: f64, max: f64 },

    #[error("photon-number distribution is not normalized (sum = {sum})")]
    Unnormalized { sum: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("no solution: {0}")]
    NoSolution(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("integrity error at record {index} (byte {offset}): {message}")]
    Integrity {
        index: usize,
        offset: u64,
        message: String,
    },

    #[error("at least 2 reference tags are required, found {found}")]
    InsufficientReference { found: usize },

    #[error("reference clock glitch at spacing indices {indices:?}")]
    ClockGlitch { indices: Vec<usize> },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("undefined estimate: {0}")]
    Undefined(String),

    #[error("fit did not converge after {iterations} iterations (residual norm {residual_norm})")]
    FitDiverged {
        iterations: usize,
        residual_norm: f64,
    },

    #[error("fit rejected: {0}")]
    WrongShape(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidParameter { .. }
            | Error::InvalidConfig(_)
            | Error::OutOfDomain { .. }
            | Error::Unnormalized { .. }
            | Error::Capacity(_) => ErrorKind::Validation,
            Error::Format { .. }
            | Error::Integrity { .. }
            | Error::InsufficientReference { .. }
            | Error::ClockGlitch { .. } => ErrorKind::Format,
            Error::Degenerate(_)
            | Error::NoSolution(_)
            | Error::EmptyInput(_)
            | Error::Undefined(_)
            | Error::FitDiverged { .. }
            | Error::WrongShape(_) => ErrorKind::Numerical,
            Error::Io(_) => ErrorKind::Io,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_unit(name: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            value,
            reason: "must lie in [0, 1]",
        })
    }
}
