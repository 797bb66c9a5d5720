use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at data row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("degenerate column '{column}': standard deviation is zero")]
    DegenerateColumn { column: String },

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid spline specification: {0}")]
    InvalidSpline(String),

    #[error("knot degeneracy: requested {requested} knots but only {achievable} distinct quantiles exist")]
    KnotDegeneracy { requested: usize, achievable: usize },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("solver capability: {0}")]
    Capability(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("fold {fold} has {events} events after stratification (need at least 2); try a smaller number of folds")]
    FoldDegeneracy { fold: usize, events: usize },

    #[error("criterion undefined: {df} nonzero coefficients with only {n} observations")]
    Saturation { df: usize, n: usize },

    #[error("truth unavailable: {0}")]
    TruthUnavailable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
