use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("validation: {0}")]
    Validation(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// Symmetric factorization failed even after the allowed regularization.
    #[error("factorization of {what} failed at pivot {pivot} (value {value:e})")]
    Factorization {
        what: &'static str,
        pivot: usize,
        value: f64,
    },

    #[error("linear solve in {what} did not converge (relative residual {residual:e})")]
    Solver { what: &'static str, residual: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// Stable advection would need more sub-steps than allowed.
    #[error("advection needs {required:e} sub-steps (limit {limit})")]
    SubstepLimit { required: f64, limit: usize },
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            actual,
        })
    }
}
