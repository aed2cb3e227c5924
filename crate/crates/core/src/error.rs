use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("point {value} outside basis domain [{lower}, {upper}]")]
    OutsideDomain { value: f64, lower: f64, upper: f64 },

    #[error("{divisor} does not divide the {segments} segments of the full basis")]
    NotDivisor { divisor: usize, segments: usize },

    #[error("fixed-effect column `{column}` is collinear with the preceding fixed columns")]
    Collinear { column: String },

    #[error("factorization failed in block `{block}` at pivot {pivot}")]
    Factorization { block: String, pivot: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("unknown name `{0}`")]
    UnknownName(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    /// Short machine-readable tag, used by the command-line front end.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::OutsideDomain { .. } => "outside_domain",
            Error::NotDivisor { .. } => "not_divisor",
            Error::Collinear { .. } => "collinear",
            Error::Factorization { .. } => "factorization",
            Error::Numerical(_) => "numerical",
            Error::UnknownName(_) => "unknown_name",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::Config(_) => "config",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
