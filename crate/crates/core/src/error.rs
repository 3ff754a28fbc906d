use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum DfmError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch in {context}: {left} vs {right}")]
    DimensionMismatch {
        context: &'static str,
        left: usize,
        right: usize,
    },

    /// The class embeddings are (numerically) linearly dependent, so the
    /// mixture weights are not identifiable.
    #[error("identifiability failure: lambda_min = {lambda_min:e}")]
    Identifiability { lambda_min: f64 },

    #[error("eigen solver did not reach the off-diagonal threshold in {sweeps} sweeps")]
    EigenNonConvergence { sweeps: usize },

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(String),
}

impl From<csv::Error> for DfmError {
    fn from(e: csv::Error) -> Self {
        DfmError::Csv(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, DfmError>;
