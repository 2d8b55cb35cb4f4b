use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix must have at least one row and one column, got {rows}x{cols}")]
    EmptyMatrix { rows: usize, cols: usize },

    #[error("data length {len} does not match shape {rows}x{cols}")]
    DataLength {
        rows: usize,
        cols: usize,
        len: usize,
    },

    #[error("non-finite value at ({row}, {col})")]
    NonFiniteValue { row: usize, col: usize },

    #[error("datapoint counts differ: {left} vs {right}")]
    ColumnMismatch { left: usize, right: usize },

    #[error("shapes differ: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("every eigenvalue is below the retention threshold")]
    AllEigenvaluesNegligible,

    #[error("{0} did not converge within its iteration cap")]
    ConvergenceFailure(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("cosine distance is undefined for a zero matrix")]
    ZeroNorm,

    #[error("zero variance in correlation input")]
    ZeroVariance,

    #[error("need {needed} canonical directions, only {available} available")]
    InsufficientRank { needed: usize, available: usize },

    #[error("hidden state magnitude {value:e} exceeded the overflow limit at step {step}")]
    NumericalOverflow { step: usize, value: f64 },

    #[error("training loss became non-finite at step {step}")]
    DivergenceDetected { step: u64 },

    #[error("requested {requested} rows from a matrix with {available}")]
    CountTooLarge { requested: usize, available: usize },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("line {line}: {message}")]
    ParseFailure { line: usize, message: String },

    #[error("unknown recipe `{0}`")]
    UnknownRecipe(String),

    #[error("recipe parameter `{name}`: {reason}")]
    Parameter { name: String, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::DegenerateInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier, used in machine-readable error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyMatrix { .. } => "empty_matrix",
            Error::DataLength { .. } => "data_length",
            Error::NonFiniteValue { .. } => "non_finite_value",
            Error::ColumnMismatch { .. } => "column_mismatch",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::NotSymmetric(_) => "not_symmetric",
            Error::AllEigenvaluesNegligible => "all_eigenvalues_negligible",
            Error::ConvergenceFailure(_) => "convergence_failure",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::DegenerateInput(_) => "degenerate_input",
            Error::ZeroNorm => "zero_norm",
            Error::ZeroVariance => "zero_variance",
            Error::InsufficientRank { .. } => "insufficient_rank",
            Error::NumericalOverflow { .. } => "numerical_overflow",
            Error::DivergenceDetected { .. } => "divergence_detected",
            Error::CountTooLarge { .. } => "count_too_large",
            Error::UnsupportedFormat(_) => "unsupported_format",
            Error::MalformedHeader(_) => "malformed_header",
            Error::ParseFailure { .. } => "parse_failure",
            Error::UnknownRecipe(_) => "unknown_recipe",
            Error::Parameter { .. } => "parameter",
            Error::Io { .. } => "io_failure",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
            Error::Toml(_) => "toml",
        }
    }
}
