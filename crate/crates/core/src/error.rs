use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// The configuration text could not be parsed.
    #[error("config parse error: {0}")]
    ConfigParse(String),

    /// A field parsed but violates a model invariant.
    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    /// Refresh probing did not observe a REF within its budget.
    #[error("refresh synchronization failed: {0}")]
    Sync(String),

    /// Threshold calibration could not separate '0' and '1' clusters.
    #[error("threshold calibration failed: {0}")]
    Calibration(String),

    #[error("address {addr:#x} is outside the {width}-bit address space")]
    AddressOutOfRange { addr: u64, width: u32 },

    #[error("eviction set infeasible: {0}")]
    Infeasible(String),

    #[error("measurement error: {0}")]
    Measurement(String),

    #[error("malformed trace line {line}: {reason}")]
    Trace { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
