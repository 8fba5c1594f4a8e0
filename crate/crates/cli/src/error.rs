use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Compute(#[from] fbkubo::Error),

    #[error("every realization failed: {0}")]
    AllFailed(String),

    #[error("{0}")]
    Output(String),

    #[error("replay mismatch: {0}")]
    Mismatch(String),
}

impl CliError {
    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            _ => 1,
        }
    }
}
