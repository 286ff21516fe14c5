use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Error taxonomy shared by the library and the CLI.
///
/// The CLI maps variants onto exit codes: `Parse` and `Precondition` are
/// input-class failures (2), `CapExceeded` is a resource-class failure (3),
/// `Containment` is a verification-class failure (4).
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("ambient mismatch: {0}")]
    AmbientMismatch(String),

    #[error("enumeration cap exceeded: would visit {needed} objects, cap is {cap}")]
    CapExceeded { needed: u128, cap: u64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("no certified subspace: spectral threshold reached its floor without verifying containment")]
    NoCertifiedSubspace,

    #[error("containment check failed: {0}")]
    Containment(String),

    #[error("retry budget exhausted after {attempts} attempts (best attempt retained {best_retained})")]
    RetriesExhausted { attempts: u32, best_retained: u64 },

    #[error("desk-scale limitation: {0}")]
    DeskScale(String),

    #[error("internal inconsistency (this is a bug): {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        Error::Internal(msg.into())
    }
}
