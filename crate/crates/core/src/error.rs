use thiserror::Error;

/// Errors raised by the toolkit library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("rank deficiency during {stage}: {detail}")]
    RankDeficient { stage: &'static str, detail: String },

    #[error("model is not asymptotically stable (spectral radius {radius})")]
    Unstable { radius: f64 },

    #[error("row {row}: {source}")]
    AtRow {
        row: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("fold {fold}: {source}")]
    AtFold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("unsupported format: {0}")]
    Format(String),

    #[error("search space too large: {0}")]
    SearchTooLarge(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
