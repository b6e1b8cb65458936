use thiserror::Error;

/// Errors raised by the training library.
#[derive(Debug, Error)]
pub enum PtError {
    /// A configuration value is out of range or inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke an operation's input contract (shape, alignment, label range).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A loss or gradient became nonfinite.
    #[error("training diverged at iteration {iteration} (group {group}): {detail}")]
    Divergence {
        iteration: usize,
        group: usize,
        detail: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} at line {line}: {detail}")]
    Parse {
        path: String,
        line: usize,
        detail: String,
    },
}

impl PtError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        PtError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, PtError>;
