use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("empty renewal across all replicates: {0}")]
    EmptyRenewal(String),

    #[error("missing stage: {0}")]
    MissingStage(String),

    #[error("{0}")]
    Lab(#[from] lqlab::LqlError),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Other(String),
}

impl CliError {
    /// Process exit code: 2 for configuration errors, 3 for runs where no
    /// replicate produced a renewal structure, 4 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::EmptyRenewal(_) => 3,
            _ => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
