use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// An operation needs the key-query matrix but none was supplied.
    #[error("mode error: {0}")]
    Mode(String),

    #[error("enumeration budget exceeded: {required} combinations > budget {budget}")]
    BudgetExceeded { required: u128, budget: u128 },

    #[error("problem too large for exhaustive solver: {0}")]
    SizeLimit(String),

    #[error("ambiguous directional profile: input {input} has tied selected tokens {ties:?}")]
    AmbiguousProfile { input: usize, ties: Vec<usize> },

    #[error("svm solution is not optimal (status {0})")]
    NotOptimal(String),

    #[error("bound violated: residual {residual} > bound {bound}")]
    BoundViolated { residual: f64, bound: f64 },

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
