use thiserror::Error;

/// Errors raised across the library. The CLI maps each variant to an exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("divergent integral: {0}")]
    Divergent(String),

    #[error("numeric failure: {msg} (residual {residual:e})")]
    Numeric { msg: String, residual: f64 },

    #[error("n = {n} exceeds the enumeration cap {cap}")]
    CapExceeded { n: usize, cap: usize },

    #[error("cell index {index} out of range for a partition with {cells} cells")]
    OutOfRange { index: usize, cells: usize },

    #[error("conditional undefined: partition has zero probability")]
    UndefinedConditional,

    #[error("degenerate model: {0}")]
    Degenerate(String),

    #[error("row {row}, column {column}: {msg}")]
    Parse {
        row: usize,
        column: String,
        msg: String,
    },

    #[error("input contains no records")]
    EmptyFile,

    #[error("config field `{field}`: {msg}")]
    Config { field: String, msg: String },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Process exit code: 2 for invalid input or configuration, 3 for
    /// numeric degeneracy, 4 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Divergent(_) | Error::Numeric { .. } | Error::Degenerate(_) | Error::UndefinedConditional => 3,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => 4,
            _ => 2,
        }
    }

    pub(crate) fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            msg: msg.into(),
        }
    }
}
