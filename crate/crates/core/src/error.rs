use termcast_nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("malformed trajectory: {0}")]
    MalformedTrajectory(String),
    #[error("invalid interval: {0}")]
    InvalidInterval(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("numerics error: {0}")]
    Numerics(String),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("bad file format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Nn(NnError),
}

impl From<NnError> for Error {
    fn from(e: NnError) -> Self {
        match e {
            NnError::NonFinite { op } => Error::Numerics(format!("non-finite value produced by {op}")),
            NnError::Config(msg) => Error::Config(msg),
            other => Error::Nn(other),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
