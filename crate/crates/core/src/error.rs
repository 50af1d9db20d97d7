use thiserror::Error;

/// Errors raised by the analytical and simulation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("backoff table index {index} out of range (table has {len} entries)")]
    TableIndex { index: usize, len: usize },

    #[error("backoff table has {len} entries, at least {needed} are required")]
    InsufficientData { len: usize, needed: usize },

    #[error("growth ratios of the backoff table oscillate (last ratios span [{min}, {max}]); no gamma limit")]
    Oscillating { min: f64, max: f64 },

    #[error("classification unavailable: {0}")]
    ClassificationUnavailable(String),

    #[error("series over the backoff table is unsupported: needs stage {needed}, table ends at {last}")]
    TableExhausted { needed: usize, last: usize },

    #[error("fixed point not bracketed: h(0) = {h_lo:e}, h(1-1e-9) = {h_hi:e}; backoff function is probably not monotone")]
    NotBracketed { h_lo: f64, h_hi: f64 },

    #[error("fit unavailable: {0}")]
    FitUnavailable(String),

    #[error("domain error: {0}")]
    Domain(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
