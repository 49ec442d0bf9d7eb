//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value {0}")]
    NonFinite(f64),

    #[error("value {value} outside [0,1]")]
    OutOfUnitRange { value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("selector references unknown group index {0}")]
    UnknownGroup(usize),

    #[error(
        "sample pool exhausted: block of {block_size} requested but only {remaining} examples \
         left after {blocks_consumed} blocks; {deficit} more examples needed"
    )]
    PoolExhausted {
        block_size: usize,
        remaining: usize,
        blocks_consumed: usize,
        deficit: usize,
    },

    #[error("iteration cap violated: {0}")]
    IterationCap(String),

    #[error("oracle failure on refinement {refinement}: {message}")]
    OracleFailure { refinement: String, message: String },

    #[error("point {id} is not covered by any qualifying cell")]
    UncoveredPoint { id: String },

    #[error("infeasible cover instance: {0}")]
    InfeasibleCover(String),

    #[error("data format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 for configuration and precondition
    /// problems, 4 for anything touching the filesystem or parsers.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) | Error::Json(_) | Error::Csv(_) | Error::Toml(_) | Error::Format(_) => 4,
            _ => 2,
        }
    }
}
