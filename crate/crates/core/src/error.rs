use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A data cell could not be parsed. Rows and columns are 1-based and count
    /// the header row when one is present.
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("ragged input at row {row}: expected {expected} fields, found {found}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value {value:?} at row {row}, column {column}")]
    NonFinite {
        row: usize,
        column: usize,
        value: String,
    },

    #[error("column {0:?} not found")]
    ColumnNotFound(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("zero operator has no identifiable leading space")]
    ZeroOperator,

    #[error("no candidate threshold values strictly inside ({lo}, {hi})")]
    EmptyGrid { lo: f64, hi: f64 },

    #[error("empty partition: {0}")]
    EmptyPartition(String),

    #[error("non-stationary AR coefficient {0} (|coef| must be < 1)")]
    NonStationary(f64),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
