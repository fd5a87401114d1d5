use thiserror::Error;

/// Errors produced by the numeric core and the feature-file codec.
#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e}, tolerance {tolerance:e})")]
    NotSymmetric { asymmetry: f64, tolerance: f64 },

    #[error("matrix is not positive semidefinite: eigenvalue {eigenvalue:e} below -{tolerance:e}")]
    NotPositiveSemidefinite { eigenvalue: f64, tolerance: f64 },

    #[error("singular matrix: eigenvalue {eigenvalue:e} ({context})")]
    Singular { eigenvalue: f64, context: String },

    #[error("optimization diverged at iteration {iteration}: {what}")]
    Divergence { iteration: usize, what: String },

    #[error("top-1 matching shortfall: {}", format_deficits(.deficits))]
    Shortfall { deficits: Vec<(usize, usize)> },

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("validation error in {block} block: {message}")]
    Validation {
        block: &'static str,
        message: String,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_deficits(deficits: &[(usize, usize)]) -> String {
    let parts: Vec<String> = deficits
        .iter()
        .map(|(class, missing)| format!("class {class} short by {missing}"))
        .collect();
    parts.join(", ")
}

pub type Result<T> = std::result::Result<T, Error>;
