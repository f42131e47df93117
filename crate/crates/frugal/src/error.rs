//! Error taxonomy shared by every module.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("dimension mismatch: {0}")]
    Dim(String),
    #[error("unbalanced transport problem: {0}")]
    Balance(String),
    #[error("no convergence after {iterations} iterations (marginal residual {residual:.3e})")]
    Convergence { iterations: usize, residual: f64 },
    #[error("load error: {0}")]
    Load(String),
    #[error("remote error: {0}")]
    Remote(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("vocabulary error: {0}")]
    Vocab(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable kind, used in CLI error lines and manifests.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyInput(_) => "EmptyInput",
            Error::Dim(_) => "DimError",
            Error::Balance(_) => "BalanceError",
            Error::Convergence { .. } => "ConvergenceError",
            Error::Load(_) => "LoadError",
            Error::Remote(_) => "RemoteError",
            Error::Protocol(_) => "ProtocolError",
            Error::InsufficientData(_) => "InsufficientData",
            Error::Shape(_) => "ShapeError",
            Error::DegenerateInput(_) => "DegenerateInput",
            Error::Vocab(_) => "VocabError",
            Error::Data(_) => "DataError",
            Error::Config(_) => "ConfigError",
            Error::Io(_) => "IoError",
            Error::Json(_) => "JsonError",
        }
    }
}
