use thiserror::Error;

/// Errors raised by the estimation core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("degenerate arm: {0}")]
    DegenerateArm(String),

    #[error("singular design: {0}")]
    SingularDesign(String),

    #[error("logistic fit did not converge after {iterations} iterations (score norm {score_norm:.3e})")]
    Convergence {
        iterations: usize,
        score_norm: f64,
        last: Box<crate::glm::LogisticFit>,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numeric overflow: {0}")]
    NumericOverflow(String),

    #[error("unsupported combination: {0}")]
    Unsupported(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag used in report status columns.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Schema(_) => "schema-error",
            Error::Parse { .. } => "parse-error",
            Error::DegenerateData(_) => "degenerate-data",
            Error::DegenerateArm(_) => "degenerate-arm",
            Error::SingularDesign(_) => "singular-design",
            Error::Convergence { .. } => "convergence-error",
            Error::Domain(_) => "domain-error",
            Error::Dimension(_) => "dimension-mismatch",
            Error::NumericOverflow(_) => "numeric-overflow",
            Error::Unsupported(_) => "unsupported",
            Error::Config(_) => "config-error",
            Error::Io(_) => "io-error",
            Error::Csv(_) => "csv-error",
            Error::Json(_) => "json-error",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
