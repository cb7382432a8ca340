use thiserror::Error;

/// Errors raised by the preconditioner, the optimizers and the task models.
#[derive(Debug, Error)]
pub enum GingerError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite values in {0}")]
    NonFinite(&'static str),

    #[error("input error: {0}")]
    Input(String),

    #[error("numerical domain error: {0}")]
    Domain(String),

    #[error("symmetric eigensolver did not converge after {0} sweeps")]
    NoConvergence(usize),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("refusing dense operation on dimension {dim} (limit {limit})")]
    TooLarge { dim: usize, limit: usize },

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, GingerError>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(GingerError::Dimension {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

pub(crate) fn check_finite(what: &'static str, xs: &[f64]) -> Result<()> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(GingerError::NonFinite(what))
    }
}
