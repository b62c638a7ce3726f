use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("argument error: {0}")]
    Argument(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("math error: {0}")]
    Math(String),

    #[error("state error: {0}")]
    State(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("missing dependency: {0}")]
    Dependency(String),

    #[error("numeric divergence at step {step}: {msg}")]
    Divergence { step: usize, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Short machine-readable tag used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Argument(_) => "argument",
            Error::Lookup(_) => "lookup",
            Error::Format { .. } => "format",
            Error::Math(_) => "math",
            Error::State(_) => "state",
            Error::Generation(_) => "generation",
            Error::Dependency(_) => "dependency",
            Error::Divergence { .. } => "divergence",
            Error::Io { .. } => "io",
            Error::Tensor(_) => "tensor",
            Error::Json(_) => "json",
        }
    }
}
