use thiserror::Error;

/// Errors raised by the panel unit-root toolkit.
///
/// The variants map onto the process exit codes used by the CLI:
/// data/input problems exit with 2, numerical failures with 3.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("resource limit exceeded: {0}")]
    Resource(String),
}

impl Error {
    /// True for failures caused by the numbers rather than the inputs' shape.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_) | Error::Degenerate(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
