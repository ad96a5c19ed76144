use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// `A = 0`: the algebraic parameters describe a line, not a finite circle.
    #[error("parameters describe a line (A = 0); no finite circle")]
    LineCase,

    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("weight function returned {value} at point {index}")]
    InvalidWeight { index: usize, value: f64 },

    #[error("point {index} is off the circle by {distance:e}")]
    OffCurve { index: usize, distance: f64 },

    #[error("experiment failed: {0}")]
    ExperimentFailed(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn ensure_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{name} is not finite ({v})")))
    }
}
