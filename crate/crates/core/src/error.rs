use thiserror::Error;

/// Errors surfaced by the solver, the model builders, and the harness.
#[derive(Error, Debug)]
pub enum Error {
    /// A probability vector failed its construction invariants.
    #[error("invalid pmf: {0}")]
    InvalidPmf(String),

    /// A model broke its contract (e.g. a kernel row that is not a pmf).
    #[error("model contract violation: {0}")]
    ModelContract(String),

    /// An operation was called outside its domain of definition.
    #[error("domain error: {0}")]
    Domain(String),

    /// The model does not provide the derivatives the operation needs.
    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    /// A resource guard refused to run an exhaustive computation.
    #[error("resource guard: {what} would require {size} units (limit {limit})")]
    Guard {
        what: String,
        size: u128,
        limit: u128,
    },

    /// A non-finite value appeared where a finite one is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A configuration file failed schema validation.
    #[error("config error: {0}")]
    Config(String),

    /// A data file (policy, CSV) failed to parse.
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code convention: 1 usage, 2 invariant failure, 3 resource guard.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Guard { .. } => 3,
            Error::Config(_) | Error::Parse(_) | Error::Io(_) => 1,
            _ => 2,
        }
    }
}
