use alloc::string::String;

/// Errors produced by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("invalid codebook: {0}")]
    InvalidCodebook(String),

    #[error("invalid payload: expected {expected} bits, got {actual}")]
    PayloadLength { expected: usize, actual: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("index {index} out of range 1..={len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("search space of {size} candidates exceeds the limit of {limit}")]
    SearchSpaceTooLarge { size: u128, limit: u128 },

    #[error("R-transform evaluated at its pole (omega = {omega})")]
    Pole { omega: f64 },

    #[error("negative radicand {radicand} in theta at c = {c}, q = {q}")]
    NegativeRadicand { c: f64, q: f64, radicand: f64 },

    #[error("quadrature did not converge with {nodes} nodes")]
    Quadrature { nodes: usize },

    #[error("no grid point converged")]
    NoConvergence,
}

pub type Result<T> = core::result::Result<T, Error>;
