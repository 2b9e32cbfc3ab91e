use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SepError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("cavity collapse{}: {detail}", site.map(|s| format!(" at site {s}")).unwrap_or_default())]
    CavityCollapse { site: Option<usize>, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate importance weights")]
    DegenerateWeights,

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid starting point: log target is -inf at {0}")]
    InvalidStart(f64),

    #[error("enumeration guard: n = {n} exceeds the cap of {cap}")]
    EnumerationGuard { n: usize, cap: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("io error: {0}")]
    Io(String),

    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl From<std::io::Error> for SepError {
    fn from(e: std::io::Error) -> Self {
        SepError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, SepError>;
