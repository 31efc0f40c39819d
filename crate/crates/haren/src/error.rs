//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An operation received tensors whose extents do not line up.
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A caller violated an operation's contract (non-scalar loss, empty
    /// input, mismatched lengths, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// An out-of-range or inconsistent configuration value.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A CTC input/target pair that admits no valid alignment.
    #[error("CTC target of length {target_len} is infeasible for {input_len} input frames")]
    CtcInfeasible { input_len: usize, target_len: usize },

    /// A non-finite value surfaced where finite numbers are required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A malformed or truncated on-disk artifact.
    #[error("format error in {path}: {message} (byte offset {offset})")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    /// A malformed manifest or cache record.
    #[error("data error: {0}")]
    Data(String),

    /// An invalid run configuration (unknown keys, bad values, missing inputs).
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
