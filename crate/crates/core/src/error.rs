use std::io;
use std::path::PathBuf;

/// Errors raised anywhere in the engine.
#[derive(Debug, thiserror::Error)]
pub enum GpmError {
    #[error("validation failed: {0}")]
    Validation(String),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NumericFailure {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("non-finite loss at task {task}, epoch {epoch}, step {step}: {diagnostic}")]
    NonFiniteLoss {
        task: usize,
        epoch: usize,
        step: usize,
        diagnostic: String,
    },

    #[error("parse error in {source_name} at byte offset {offset}: {reason}")]
    Parse {
        source_name: String,
        offset: u64,
        reason: String,
    },

    #[error("lookup failed: {0}")]
    Lookup(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl GpmError {
    pub(crate) fn shape(context: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        GpmError::Shape {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        GpmError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures that originate in floating-point arithmetic rather
    /// than in inputs or the filesystem.
    pub fn is_numeric(&self) -> bool {
        matches!(self, GpmError::NumericFailure { .. } | GpmError::NonFiniteLoss { .. })
    }
}

pub type Result<T> = std::result::Result<T, GpmError>;
