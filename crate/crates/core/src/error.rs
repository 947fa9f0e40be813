//! Error type shared across the crate, tagged by pipeline phase so the CLI
//! can name the failing phase on the diagnostic stream.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),
    #[error("topology: {0}")]
    Topology(String),
    #[error("data: {0}")]
    Data(String),
    #[error("warmup: {0}")]
    Warmup(String),
    #[error("detection: {0}")]
    Detection(String),
    #[error("optimization: {0}")]
    Optimization(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short phase tag used in CLI diagnostics and exit-code reporting.
    pub fn phase(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Topology(_) => "topology",
            Error::Data(_) => "data",
            Error::Warmup(_) => "warmup",
            Error::Detection(_) => "detection",
            Error::Optimization(_) => "optimization",
            Error::Io(_) => "io",
        }
    }

    /// True for errors the CLI maps to exit code 2 rather than 3.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
