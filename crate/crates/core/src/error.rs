use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("length mismatch: expected {expected} scalars, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("shape error in `{op}`: {reason}")]
    Shape { op: String, reason: String },

    #[error("domain error in `{op}`: {reason}")]
    Domain { op: String, reason: String },

    /// Hard failure of an operator rule, the analogue of a library crash.
    #[error("evaluation crash in `{op}`: {reason}")]
    Crash { op: String, reason: String },

    #[error("config error in `{op}`: {reason}")]
    Config { op: String, reason: String },

    #[error("primitive `{0}` is already registered")]
    DuplicateName(String),

    #[error("unknown primitive `{0}`")]
    UnknownPrimitive(String),

    #[error("fault target `{0}` is not registered")]
    UnknownTarget(String),

    #[error("unknown registry variant `{0}`")]
    UnknownVariant(String),

    #[error("unknown function `{0}`")]
    UnknownFunction(String),

    #[error("function `{0}` has no seeds")]
    NoSeeds(String),

    #[error("numerical differentiation refused: input precision is {0}, need f64")]
    PrecisionRefused(String),

    #[error("saved value `{0}` was not recorded on the tape")]
    NotSaved(String),

    #[error("invalid setting: {0}")]
    Invalid(String),
}

impl Error {
    pub fn shape(op: &str, reason: impl Into<String>) -> Self {
        Error::Shape { op: op.to_string(), reason: reason.into() }
    }

    pub fn domain(op: &str, reason: impl Into<String>) -> Self {
        Error::Domain { op: op.to_string(), reason: reason.into() }
    }

    pub fn crash(op: &str, reason: impl Into<String>) -> Self {
        Error::Crash { op: op.to_string(), reason: reason.into() }
    }

    pub fn config(op: &str, reason: impl Into<String>) -> Self {
        Error::Config { op: op.to_string(), reason: reason.into() }
    }

    /// Broad category used by case validation and reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::LengthMismatch { .. } | Error::Shape { .. } => "shape",
            Error::Domain { .. } => "domain",
            Error::Crash { .. } => "crash",
            Error::Config { .. } => "config",
            _ => "internal",
        }
    }
}
