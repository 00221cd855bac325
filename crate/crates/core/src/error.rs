//! Crate-wide error type. Every fallible public function returns
//! [`Result`]; panics are reserved for internal invariant violations.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An operation was handed tensors whose shapes do not line up.
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// A forward kernel produced NaN or infinity.
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    /// Misuse of the backward pass (non-scalar root, consumed graph, ...).
    #[error("backward: {0}")]
    Backward(String),

    /// A configuration field or argument is out of its documented range.
    /// `field` names the offending field so callers can surface it.
    #[error("invalid value for `{field}`: {detail}")]
    InvalidValue { field: String, detail: String },

    /// A device table has no entry for a requested key.
    #[error("device `{device}` has no cost entry for {key}")]
    MissingLutEntry { device: String, key: String },

    /// A dataset or feature batch was empty where samples are required.
    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    /// The configured search space has more points than fit in a u64.
    #[error("search space size exceeds 2^63 and cannot be reported exactly")]
    SpaceOverflow,

    #[error("i/o error on `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("could not parse `{path}`: {detail}")]
    Parse { path: String, detail: String },
}

impl Error {
    pub fn invalid(field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::InvalidValue { field: field.into(), detail: detail.into() }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), detail: detail.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
