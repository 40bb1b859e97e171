use std::path::PathBuf;

/// Errors produced by the segmentation engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("operator load error: {0}")]
    OperatorLoad(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("solver diverged at iteration {iteration}: non-finite value in {field}")]
    Divergence { iteration: usize, field: &'static str },

    #[error("image error ({path}): {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("manifest error at line {line}: {reason}")]
    Manifest { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}
