use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Bad dimensions, divisibility violations, malformed config files.
    #[error("configuration error: {0}")]
    Config(String),
    /// An input outside the domain of a mathematical operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A link function that the requested operation cannot handle.
    #[error("unsupported link: {0}")]
    UnsupportedLink(String),
    /// Non-positive curvature passed where a strictly convex estimate is needed.
    #[error("degenerate curvature: m_hat = {0}")]
    DegenerateCurvature(f64),
    /// Iterates or intermediate quantities became non-finite.
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::UnsupportedLink(_) => 2,
            Error::Io(_) | Error::Json(_) | Error::Csv(_) => 3,
            Error::Domain(_) | Error::DegenerateCurvature(_) | Error::Numerical(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
