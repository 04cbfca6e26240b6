use thiserror::Error;

pub type Result<T> = std::result::Result<T, DipsError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DipsError {
    #[error("privacy budget must be positive and finite, got {0}")]
    InvalidBudget(f64),

    #[error("budget exhausted: charging {requested} would raise effective spend to {would_be} > total {total}")]
    BudgetExhausted {
        requested: f64,
        would_be: f64,
        total: f64,
    },

    #[error("parameter outside its domain: {0}")]
    ParameterDomain(String),

    #[error("value {value} outside the domain of axis `{axis}`")]
    OutOfDomain { axis: String, value: String },

    #[error("every sanitized cell is zero; the release is unusable")]
    AllCellsZero,

    #[error("{0} failed to converge")]
    NonConvergence(String),

    #[error("degenerate posterior: {0}")]
    PosteriorDegenerate(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("schema error: {0}")]
    Schema(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for DipsError {
    fn from(e: std::io::Error) -> Self {
        DipsError::Io(e.to_string())
    }
}

impl From<csv::Error> for DipsError {
    fn from(e: csv::Error) -> Self {
        DipsError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for DipsError {
    fn from(e: serde_json::Error) -> Self {
        DipsError::Io(e.to_string())
    }
}
