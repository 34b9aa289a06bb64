use thiserror::Error;

/// Errors raised by the solver stack.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("ragged block {index}: {detail}")]
    RaggedBlock { index: usize, detail: String },

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("non-finite vector field output at t = {t}")]
    NonFiniteField { t: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid solver configuration: {0}")]
    Config(String),

    #[error("{0} is required by the requested linearization but the problem provides none")]
    MissingJacobian(&'static str),

    #[error("singular innovation at t = {t} (dimension {index}, s = {value})")]
    SingularInnovation { t: f64, index: usize, value: f64 },

    #[error("step size underflow at t = {t}: proposed h = {h} below h_min = {h_min}")]
    StepSizeUnderflow { t: f64, h: f64, h_min: f64 },

    #[error("maximum number of steps ({0}) exceeded")]
    MaxStepsExceeded(usize),

    #[error("{phase} phase failed: {source}")]
    Phase {
        phase: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("calibration accumulator is empty")]
    EmptyAccumulator,

    #[error("unknown problem '{0}'")]
    UnknownProblem(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn in_phase(self, phase: &'static str) -> Error {
        Error::Phase {
            phase,
            source: Box::new(self),
        }
    }

    /// Strips phase wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Phase { source, .. } => source.root(),
            other => other,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
