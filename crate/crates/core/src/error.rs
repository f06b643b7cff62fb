use thiserror::Error;

/// Errors produced by the simulation toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported QAM order: {0} bits per 2D symbol")]
    UnsupportedOrder(u32),

    #[error("constellation of size {0} cannot be split into two equal shells")]
    OddCardinality(usize),

    #[error("bit stream of length {len} is not a multiple of {bits} bits per symbol")]
    RaggedBitStream { len: usize, bits: u32 },

    #[error("invalid bit value {0} (expected 0 or 1)")]
    InvalidBit(u8),

    #[error("invalid constellation: {0}")]
    InvalidConstellation(String),

    #[error("constellation file parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("frequency grid mismatch: {0}")]
    GridMismatch(String),

    #[error("WDM band of {band_hz:.4e} Hz does not fit in sample rate {sample_rate_hz:.4e} Hz")]
    Aliasing { band_hz: f64, sample_rate_hz: f64 },

    #[error("timing alignment failed: {0}")]
    Alignment(String),

    #[error("step of {step_km} km accumulates {phase:.3e} rad of nonlinear phase (limit {limit:.3e} rad)")]
    StepTooLong { step_km: f64, phase: f64, limit: f64 },

    #[error("threshold GMI {threshold} is not bracketed by the sampled distances")]
    ThresholdNotBracketed { threshold: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
