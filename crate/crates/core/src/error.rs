use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("bad data: {0}")]
    Data(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed document: {0}")]
    Format(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable short name, printed by the command-line front end.
    pub fn name(&self) -> &'static str {
        match self {
            Error::Parameter(_) => "ParameterError",
            Error::Shape { .. } => "ShapeError",
            Error::Data(_) => "DataError",
            Error::State(_) => "StateError",
            Error::Io(_) => "IoError",
            Error::Format(_) => "FormatError",
            Error::Csv(_) => "CsvError",
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape { expected, got })
    }
}
