use thiserror::Error;

/// Errors raised across the sampler and diagnostics.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid mixture: {0}")]
    InvalidMixture(String),

    #[error("invalid potential: {0}")]
    InvalidPotential(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("numerical blowup in {phase} (chain {chain:?}, iteration {iteration}): {detail}")]
    NumericalBlowup {
        phase: &'static str,
        chain: Option<usize>,
        iteration: u64,
        /// Position at which the check failed.
        iterate: Vec<f64>,
        detail: String,
    },

    #[error("quadrature grid misses {missing_mass:e} of the probability mass")]
    Coverage { missing_mass: f64 },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("degenerate test function: zero gradient energy")]
    DegenerateTestFunction,

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
