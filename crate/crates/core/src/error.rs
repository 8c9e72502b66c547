use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}:{line}: {msg}")]
    Data { file: String, line: usize, msg: String },

    #[error("invalid corpus: {0}")]
    Corpus(String),

    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("question `{0}` was already asked")]
    AlreadyAsked(String),

    #[error("answer `{answer}` is not valid for question `{question}` (expected one of: {})", .valid.join(", "))]
    InvalidAnswer { question: String, answer: String, valid: Vec<String> },

    #[error("simulator: {0}")]
    Simulator(String),

    #[error("responder failed: {0}")]
    Responder(String),

    #[error("server: {0}")]
    Server(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("data leak: {0}")]
    DataLeak(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn data(file: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Data { file: file.into(), line, msg: msg.into() }
    }
}
