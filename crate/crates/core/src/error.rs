use thiserror::Error;

/// Errors raised by the library.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    /// A precondition of an operation was not met.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    /// The input is valid but carries no usable information (all-zero spectrum,
    /// identical points, rank-deficient design).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("method {method} failed in replication with seed {seed:#018x}: {source}")]
    Replication {
        method: String,
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// True for failures caused by invalid input rather than by the numerics.
    pub fn is_contract(&self) -> bool {
        match self {
            Error::Contract(_) | Error::DimensionMismatch { .. } => true,
            Error::Replication { source, .. } => source.is_contract(),
            _ => false,
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}
