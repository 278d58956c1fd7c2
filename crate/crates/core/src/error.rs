use thiserror::Error;

use crate::protocol::EventLedger;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("schema error: {0}")]
    Schema(String),

    /// A required correlation-table cell has no rounds.
    #[error("insufficient data: cell (x={x}, y={y}) has no rounds")]
    InsufficientData { x: usize, y: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("acceptance window [{t_s_ns}, {t_e_ns}] ns accepts no heralds")]
    UndefinedWindow { t_s_ns: f64, t_e_ns: f64 },

    #[error("no positive key: {0}")]
    NoPositiveKey(String),

    #[error("CHSH value {0} does not violate the local bound")]
    NoViolation(f64),

    #[error("CHSH value {0} exceeds the Tsirelson bound")]
    SupraQuantum(f64),

    #[error("no herald after {attempts} attempts")]
    ProgressTimeout { attempts: u64 },

    /// The sampler failed mid-run; the rounds recorded so far are kept.
    #[error("run aborted after {} rounds: {reason}", .partial.len())]
    Aborted {
        partial: Box<EventLedger>,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Process exit code for the CLI: 2 for numeric failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) => 2,
            _ => 1,
        }
    }
}
