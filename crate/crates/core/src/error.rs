use thiserror::Error;

/// Errors produced anywhere in the simulation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("delay tap spacing {delta_tau_s} s must exceed 1/(2 fc) = {min_s} s")]
    InvalidDelaySpacing { delta_tau_s: f64, min_s: f64 },

    #[error("invalid pilot set: {0}")]
    InvalidPilotSet(String),

    #[error("total subcarrier count {0} must be even and positive")]
    OddSubcarrierCount(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },

    #[error("pilot set is empty")]
    EmptyPilotSet,

    #[error("delay tap spacing {delta_tau_s} s is below the required minimum {min_s} s")]
    DelayTooSmall { delta_tau_s: f64, min_s: f64 },

    #[error("cyclic prefix violated: {0}")]
    CpViolation(String),

    #[error("invalid path specification: {0}")]
    InvalidSpec(String),

    #[error("parse error at record {record}, field `{field}`: {message}")]
    Parse {
        record: usize,
        field: String,
        message: String,
    },

    #[error("channel file contains no paths")]
    EmptyChannel,

    #[error("{beams} beams do not divide {total} subcarriers")]
    NonDivisible { total: usize, beams: usize },

    #[error("resource block for pilot {0} is empty")]
    EmptyBlock(usize),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
