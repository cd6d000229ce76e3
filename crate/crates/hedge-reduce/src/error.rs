use thiserror::Error;

/// Error categories surfaced by the library. The CLI maps these onto
/// exit codes (config = 2, numerical = 3, io = 4).
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch on axis {axis}: expected {expected}, got {actual}")]
    DimensionMismatch {
        axis: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite entry at {location}")]
    NonFinite { location: String },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("coefficients were fitted on basis {expected}, reconstruction requested with basis {actual}")]
    BasisMismatch { expected: String, actual: String },

    #[error("all basis columns dropped during orthonormalization (empty basis)")]
    EmptyBasis,

    #[error("missing state variable '{0}'")]
    MissingStateVariable(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("iteration did not converge: {0}")]
    NonConvergence(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("corrupt tensor file: {0}")]
    CorruptFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Exit-code category used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io(_) | Error::CorruptFile(_) => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
