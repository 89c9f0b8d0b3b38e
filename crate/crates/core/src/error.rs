use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("row {row}: unparseable label `{value}`")]
    InvalidLabel { row: usize, value: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("text is empty")]
    EmptyText,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("backend error: {0}")]
    Backend(String),

    #[error("no admissible fill for mask slot {slot}")]
    NoFill { slot: usize },

    #[error("backend contract violation: {0}")]
    Contract(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the CLI: 1 for input/validation problems,
    /// 2 for model or backend failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Model(_) | Error::Backend(_) | Error::NoFill { .. } | Error::Contract(_) => 2,
            _ => 1,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Parse(err.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        Error::Parse(err.to_string())
    }
}
