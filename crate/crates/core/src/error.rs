//! Error taxonomy shared by every module in the crate.
//!
//! Variants are grouped by how a caller should react: `Config` and
//! `Dimension` indicate caller bugs or bad settings, `Domain` and `Input`
//! indicate invalid numeric arguments, `Data` and `Parse` indicate bad
//! dataset contents, `Numerical` indicates an aborted run, and `Io` wraps
//! filesystem failures.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum EvibError {
    /// Invalid configuration value (bad hyperparameter, empty grid, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A numeric argument left the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Non-finite or otherwise malformed numeric input.
    #[error("input error: {0}")]
    Input(String),

    /// Tensor or layer shapes do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Reduction or metric applied to an empty collection.
    #[error("empty-input error: {0}")]
    Empty(String),

    /// Metric input that degenerates the statistic (e.g. single-class AUROC).
    #[error("degenerate-input error: {0}")]
    Degenerate(String),

    /// Dataset contents violate the declared contract (label out of range, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Malformed file contents; the message names the offending location.
    #[error("parse error: {0}")]
    Parse(String),

    /// Post-hoc adjustment pushed a concentration below its floor.
    #[error("adjustment-overflow error: {0}")]
    AdjustmentOverflow(String),

    /// Training aborted on a non-finite loss; the message names the batch.
    #[error("numerical abort: {0}")]
    Numerical(String),

    /// Filesystem failure.
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, EvibError>;
