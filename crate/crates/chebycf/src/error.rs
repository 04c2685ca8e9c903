//! Error type shared across the crate.

use std::path::PathBuf;

/// Errors produced by dataset loading, model fitting, persistence and
/// the verification oracles.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{path}:{line}: cannot parse token {token:?} as a non-negative integer")]
    Parse {
        path: PathBuf,
        line: usize,
        token: String,
    },

    #[error("interaction (user {user}, item {item}) appears in both train and test")]
    TrainTestOverlap { user: u64, item: u64 },

    #[error("training matrix is empty")]
    EmptyTrain,

    #[error("dimension mismatch: expected length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid hyperparameter: {0}")]
    InvalidParameter(String),

    #[error("eta = {eta} exceeds the number of items ({num_items})")]
    EtaOutOfRange { eta: usize, num_items: usize },

    #[error("dense oracle supports up to {cap} items, got {num_items}; use the matrix-free path")]
    OracleCapExceeded { num_items: usize, cap: usize },

    #[error("model file version {found} is not supported (expected {expected})")]
    ModelVersion { found: u32, expected: u32 },

    #[error("model file is corrupt: {0}")]
    ModelCorrupt(String),

    #[error("model was fitted on a different training split (checksum mismatch)")]
    DatasetMismatch,
}

pub type Result<T> = std::result::Result<T, Error>;
