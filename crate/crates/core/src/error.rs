use alloc::string::String;

use crate::numerics::NumericsError;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("invalid configuration `{key}`: {reason}")]
    Config { key: &'static str, reason: String },
    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
    #[error("non-finite {quantity} at tick {tick}")]
    NonFinite { tick: usize, quantity: &'static str },
    #[error("invalid probability distribution: {reason}")]
    InvalidDistribution { reason: String },
    #[error("data error at byte {offset:?}, row {row:?}: {reason}")]
    Data {
        reason: String,
        offset: Option<usize>,
        row: Option<usize>,
    },
    #[error("correlation undefined: {reason}")]
    UndefinedCorrelation { reason: &'static str },
}

impl Error {
    pub(crate) fn config(key: &'static str, reason: impl Into<String>) -> Self {
        Error::Config {
            key,
            reason: reason.into(),
        }
    }

    pub(crate) fn arg(op: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            reason: reason.into(),
        }
    }

    pub(crate) fn data(reason: impl Into<String>) -> Self {
        Error::Data {
            reason: reason.into(),
            offset: None,
            row: None,
        }
    }
}
