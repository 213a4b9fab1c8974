use std::path::PathBuf;

/// Errors raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid prox parameter gamma={gamma} (rho={rho}): need gamma > 0 and gamma*rho < 1")]
    InvalidGamma { gamma: f64, rho: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("client {client} has an empty shard")]
    EmptyShard { client: usize },

    #[error("client index {client} out of range for {clients} clients")]
    ClientOutOfRange { client: usize, clients: usize },

    #[error("cannot split {samples} samples across {clients} clients")]
    TooManyClients { clients: usize, samples: usize },

    #[error("invalid regularizer: {0}")]
    InvalidRegularizer(String),

    #[error("operation not supported for regularizer kind {0}")]
    UnsupportedKind(&'static str),

    #[error("{0}")]
    InvalidInput(String),

    #[error("bad IDX magic 0x{found:08X} in {path}, expected 0x{expected:08X}")]
    BadMagic { path: PathBuf, expected: u32, found: u32 },

    #[error("truncated file {path}: {detail}")]
    Truncated { path: PathBuf, detail: String },

    #[error("missing uplink: expected {expected} messages, got {got}")]
    MissingUplink { expected: usize, got: usize },

    #[error("draw schedule mismatch: {0}")]
    DrawScheduleMismatch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
