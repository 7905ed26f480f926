use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    /// A feeder or scenario document is well-formed but describes an invalid system.
    #[error("invalid {location}: {message}")]
    Validation { location: String, message: String },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("power flow did not converge after {iterations} iterations (mismatch {residual:.3e} pu)")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("system is not observable: measurement Jacobian rank {rank} < {required}")]
    Unobservable { rank: usize, required: usize },

    #[error("unknown node: bus {bus} phase {phase}")]
    UnknownNode { bus: u32, phase: char },

    #[error("bus {bus} phase {phase} belongs to the slack bus and has no state index")]
    SlackNode { bus: u32, phase: char },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("true power flow failed at t = {t}: {source}")]
    TruthPowerFlow {
        t: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn validation(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            location: location.into(),
            message: message.into(),
        }
    }
}
