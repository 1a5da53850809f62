use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("sample budget of {budget} exhausted after {drawn} draws")]
    BudgetExhausted { budget: u64, drawn: u64 },

    #[error("no sample count up to 2^60 reaches the breakpoint condition")]
    UnreachableBreakpoint,

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("power iteration did not converge; best estimate {best}")]
    NonConvergence { best: f64 },

    #[error("tester failed at trial {trial}: {source}")]
    Trial {
        trial: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
