use std::path::PathBuf;

use gpm_core::GpmError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(#[source] GpmError),

    #[error("numeric failure: {0}")]
    Numeric(#[source] GpmError),

    #[error("run failed: {0}")]
    Run(#[source] GpmError),

    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// Process exit status: 2 config, 3 data, 4 numeric, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Run(_) | CliError::Output { .. } => 1,
        }
    }

    /// Classifies an error raised while training.
    pub fn from_training(e: GpmError) -> Self {
        if e.is_numeric() {
            CliError::Numeric(e)
        } else {
            CliError::Run(e)
        }
    }
}
