use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed configuration: {0}")]
    Parse(#[from] serde_json::Error),

    /// A configuration invariant does not hold. The message names the invariant.
    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("grid side {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("evaluation point ({x:.6}, {y:.6}) m falls outside the {extent:.6} m grid at height {height} m")]
    OutOfGrid { x: f64, y: f64, extent: f64, height: f64 },

    #[error("preconditioner entry {index} is not positive ({value:e})")]
    NonPositiveDiagonal { index: usize, value: f64 },

    #[error("non-finite {0} encountered in PCG")]
    NonFinite(&'static str),

    #[error("dense oracle dimension {dim} exceeds the cap of {cap}")]
    OracleTooLarge { dim: usize, cap: usize },

    #[error("{0}")]
    Sweep(String),
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
