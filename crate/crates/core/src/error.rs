use thiserror::Error;

use crate::regimes::Regime;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported order {order} (maximum {max})")]
    UnsupportedOrder { order: usize, max: usize },

    #[error("unsupported size: {0}")]
    UnsupportedSize(String),

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("occupation regularity violated: {0}")]
    RegularityViolation(String),

    #[error("ambiguous regime: slope {slope:.4} lies between {first:?} and {second:?}")]
    AmbiguousVerdict {
        first: Regime,
        second: Regime,
        slope: f64,
    },

    #[error("no central limit theorem in regime {0:?}")]
    NoClt(Regime),

    #[error("rule is not stationary: {0}")]
    NotStationary(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
