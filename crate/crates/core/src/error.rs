use thiserror::Error;

use crate::combining::CombiningMethod;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("truncation interval is empty (bound = {0})")]
    DegenerateInterval(f64),

    #[error("conditioning event has zero density")]
    DegenerateConditioning,

    #[error("no adjustment available for m={m}, r={r}, method={method}")]
    MissingAdjustment {
        m: usize,
        r: usize,
        method: CombiningMethod,
    },

    #[error("analytic evaluation unsupported for a small block of size {0}")]
    Unsupported(usize),

    #[error("invalid input: {0}")]
    Input(String),
}

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
