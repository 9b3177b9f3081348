use alloc::string::String;
use core::fmt;

/// Error type shared by all modules.
///
/// `InvalidConfig` marks a caller-supplied parameter that violates its
/// documented domain; `Degenerate` marks an input data set on which the
/// requested statistic is undefined.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A configuration value is outside its admissible range.
    InvalidConfig {
        /// Name of the offending field.
        field: &'static str,
        /// Human-readable explanation including the offending value.
        reason: String,
    },
    /// The input data cannot support the requested computation.
    Degenerate {
        /// Human-readable explanation.
        reason: String,
    },
}

impl Error {
    pub(crate) fn invalid_config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn degenerate(reason: impl Into<String>) -> Self {
        Error::Degenerate {
            reason: reason.into(),
        }
    }

    /// True when the error stems from configuration rather than data.
    #[must_use]
    pub fn is_config(&self) -> bool {
        matches!(self, Error::InvalidConfig { .. })
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidConfig { field, reason } => {
                write!(f, "invalid configuration for `{field}`: {reason}")
            }
            Error::Degenerate { reason } => write!(f, "degenerate input: {reason}"),
        }
    }
}

impl core::error::Error for Error {}
