use thiserror::Error;

/// Errors produced by the CPG, gait and transport layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("numeric divergence at t = {t:.6} s")]
    NumericDivergence { t: f64 },

    #[error("singular operator: {0}")]
    Singular(&'static str),

    #[error("unknown preset `{name}` (catalog: {})", .catalog.join(", "))]
    PresetNotFound { name: String, catalog: Vec<String> },

    #[error("catalog parse error at line {line}, column {column}: {message}")]
    Catalog {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("invalid message: {0}")]
    InvalidMessage(String),

    #[error("message for module {got} routed to module {expected}")]
    Routing { expected: u32, got: u32 },

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
