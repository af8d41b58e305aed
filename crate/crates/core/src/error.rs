use std::path::PathBuf;

/// Errors surfaced by the analysis library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed WAV data: {0}")]
    WavFormat(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A caller handed an operation arguments that break its contract,
    /// e.g. shape parameters that do not match the diagnosis family.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("mask alignment: {0}")]
    Alignment(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("case store {path}: bad lines {lines:?}")]
    CorruptStore { path: PathBuf, lines: Vec<usize> },

    #[error("no counterfactual needed: target {0} is already the resolved diagnosis")]
    NoCounterfactualNeeded(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a library fault.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Contract(_) | Error::Csv(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
