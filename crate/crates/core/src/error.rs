use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("integrity violation: {0}")]
    Integrity(String),

    #[error("{op} needs at least 2 rows in train mode, got {rows}")]
    BatchSize { op: &'static str, rows: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("stale or missing intermediates: {0}")]
    State(String),

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn dim_err(op: &'static str, detail: String) -> Error {
    Error::Dimension { op, detail }
}
