use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid range: {0}")]
    InvalidRange(String),

    #[error("matrix is not positive semidefinite (pivot {pivot:.3e} at row {row})")]
    NotPsd { row: usize, pivot: f64 },

    #[error("singular covariance: {0}")]
    SingularCovariance(String),

    /// Raised where a quantity is undefined at the clean (t = 0) or fully
    /// noised end of the diffusion.
    #[error("degenerate diffusion time: {0}")]
    DegenerateTime(String),

    #[error("degenerate samples: {0}")]
    DegenerateSamples(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPsd { .. }
                | Error::SingularCovariance(_)
                | Error::DegenerateTime(_)
                | Error::DegenerateSamples(_)
        )
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
