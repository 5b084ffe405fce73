use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by graph construction, model code and the conditioning loop.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("invalid argument to {op}: {detail}")]
    Argument { op: &'static str, detail: String },
    #[error("domain error in {op}: value {value} at flat index {index}")]
    Domain {
        op: &'static str,
        index: usize,
        value: f64,
    },
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("ensemble has no converged members ({} attempted)", .diagnostics.len())]
    EmptyEnsemble { diagnostics: Vec<String> },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn dim_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Dimension {
        op,
        detail: detail.into(),
    }
}

pub(crate) fn arg_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Argument {
        op,
        detail: detail.into(),
    }
}
