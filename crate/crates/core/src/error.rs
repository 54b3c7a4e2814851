use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("out of bounds: {0}")]
    OutOfBounds(String),

    #[error("could not reach building density {target:.3} after {attempts} placement attempts (reached {reached:.3})")]
    UnsatisfiableDensity {
        target: f64,
        reached: f64,
        attempts: usize,
    },

    #[error("transmitter at {0:?} sits on a building cell")]
    TxOnBuilding((usize, usize)),

    #[error("requested {requested} samples but only {available} eligible pixels")]
    NotEnoughPixels { requested: usize, available: usize },

    #[error("sample rejected: {0}")]
    Rejected(String),

    #[error("corrupt container at byte offset {offset}: {reason}")]
    Corrupt { offset: u64, reason: String },

    #[error("undefined metric: {0}")]
    Undefined(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("missing artifact {path}")]
    MissingArtifact { path: PathBuf },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("image encoding failed: {0}")]
    Image(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
