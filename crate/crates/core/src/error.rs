use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("input shape mismatch: expected {expected}, got {got}")]
    InputShape { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty data: {0}")]
    EmptyData(&'static str),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Diverged { epoch: usize },

    #[error("no bracket found: balance stays {sign} for every scale factor within {doublings} doublings of {start}")]
    NoBracket {
        sign: &'static str,
        start: f64,
        doublings: u32,
    },

    #[error("invalid bracket: balance at low end is {low_balance}, at high end {high_balance}; need low < 0 < high")]
    InvalidBracket { low_balance: f64, high_balance: f64 },

    #[error("bisection did not converge after {iterations} iterations (last balance {last_balance})")]
    NoConvergence { iterations: usize, last_balance: f64 },

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("malformed document: {0}")]
    Document(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("repeat {repeat}: {source}")]
    Repeat {
        repeat: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// True for errors caused by bad input or configuration rather than by a
    /// numerical or runtime failure.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::InputShape { .. }
            | Error::InvalidConfig(_)
            | Error::EmptyData(_)
            | Error::Domain(_)
            | Error::InvalidBracket { .. }
            | Error::Parse { .. }
            | Error::Document(_) => true,
            Error::Diverged { .. }
            | Error::NoBracket { .. }
            | Error::NoConvergence { .. }
            | Error::Io { .. } => false,
            Error::Repeat { source, .. } => source.is_validation(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
