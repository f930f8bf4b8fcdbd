use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("value {value} outside the domain {domain}")]
    Domain { value: f64, domain: &'static str },

    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    #[error("invalid slopes s_I={s_i}, s_P={s_p}: need s_P <= 1 <= s_I and s_I != s_P")]
    InvalidSlopes { s_i: f64, s_p: f64 },

    #[error("burst generator is exhausted")]
    Exhausted,

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("trace contains no data rows")]
    EmptyTrace,

    #[error("header decode: {0}")]
    Decode(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the environment (files, sockets) rather than of
    /// the data or parameters handed in.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::File { .. } | Error::Io(_))
    }
}
