use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid space: {0}")]
    InvalidSpace(String),

    #[error("invalid metric: {0}")]
    InvalidMetric(String),

    #[error("operation requires positive total mass")]
    ZeroMass,

    #[error("mark dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("test function is not certifiably bounded: {0}")]
    UnboundedTestFunction(String),

    #[error("invalid test function: {0}")]
    InvalidTestFunction(String),

    #[error("exact evaluation needs {required} terms, budget is {budget}")]
    BudgetExceeded { required: u128, budget: u64 },

    #[error("invalid glueing: {0}")]
    InvalidGlueing(String),

    #[error("invalid law: {0}")]
    InvalidLaw(String),

    #[error("precondition violated: {0}")]
    PreconditionViolated(String),

    #[error("degenerate grid: {0}")]
    DegenerateGrid(String),

    #[error("moment {0} is not positive; the growth report needs positive moments")]
    NonPositiveMoment(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}
