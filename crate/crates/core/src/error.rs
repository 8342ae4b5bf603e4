//! Error type shared across the crate.

use thiserror::Error;

/// Errors raised by model construction, sensing sessions, divergence
/// calculators and detection procedures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid contamination class: {0}")]
    InvalidClass(String),
    #[error("member index {index} out of range for class of size {size}")]
    IndexOutOfRange { index: u64, size: u64 },
    #[error("class too large to enumerate or count exactly")]
    ClassTooLarge,
    #[error("invalid correlation coefficient: {0}")]
    InvalidRho(String),
    #[error("invalid problem instance: {0}")]
    InvalidInstance(String),
    #[error("query is empty")]
    EmptyQuery,
    #[error("coordinate {0} out of range 1..={1}")]
    CoordinateOutOfRange(u32, u32),
    #[error("invalid strategy parameters: {0}")]
    InvalidStrategy(String),
    #[error("strategy emitted a query after a budget refusal")]
    ProtocolViolation,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("class complexity is undefined for this class")]
    UnsupportedClass,
    #[error("Monte Carlo calibration unreliable: n_sims {n_sims} < 10/alpha = {min}")]
    CalibrationUnreliable { n_sims: usize, min: usize },
    #[error("procedure/model mismatch: {0}")]
    ModelMismatch(String),
    #[error("invalid detector parameters: {0}")]
    InvalidDetector(String),
    #[error("invalid risk configuration: {0}")]
    InvalidRiskConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
