use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("missing outside designated column: column `{column}`, row {row}")]
    MissingOutsideDesignated { column: String, row: usize },

    #[error("invalid layout: {0}")]
    Layout(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("index {index} out of range for n = {n}")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("no variation in response indicator")]
    NoResponseVariation,

    #[error("ill-conditioned dual Hessian")]
    IllConditionedHessian,

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("under-determined: {available} usable rows for {params} parameters")]
    UnderDetermined { available: usize, params: usize },

    #[error("degenerate imputation model: {0}")]
    DegenerateModel(String),

    #[error("oracle column unavailable: {0}")]
    OracleUnavailable(String),

    #[error("payload rejected: {0}")]
    Payload(String),

    #[error("unknown scenario {0}")]
    UnknownScenario(u8),

    #[error("unknown method `{0}`")]
    UnknownMethod(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
