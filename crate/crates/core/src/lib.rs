//! Privacy-preserving face-embedding matching.
//!
//! Embeddings can be compressed by prefix truncation, protected in the clear
//! (PolyProtect, MIU, NFR, Laplace noise), or encrypted with the CKKS engine in
//! [`embshield_ckks`] and then hashed and scored under encryption. The
//! [`eval`] module measures what each representation still leaks about
//! soft-biometric attributes, and [`pipeline`] runs whole protection chains.

pub mod embedding;
pub mod enc_ops;
pub mod eval;
pub mod pipeline;
pub mod protect;
pub mod synth;

pub use embshield_ckks as ckks;

use embshield_ckks::HeError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid dimension {0}")]
    InvalidDim(usize),
    #[error("non-finite value {0}")]
    NonFinite(f64),
    #[error("vector is all zeros")]
    ZeroVector,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("gallery is empty")]
    EmptyGallery,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("train fraction {0} is outside (0, 1)")]
    InvalidFraction(f64),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("dimension {dim} is smaller than the window {needed}")]
    DimTooSmall { dim: usize, needed: usize },
    #[error("invalid block size {0}")]
    InvalidBlockSize(usize),
    #[error("interval [{lo}, {hi}] is not a valid positive interval")]
    InvalidInterval { lo: f64, hi: f64 },
    #[error("least-squares system is ill-conditioned (estimate {0:e})")]
    IllConditioned(f64),
    #[error("value {value} lies outside the fitted interval [{lo}, {hi}]")]
    DomainViolation { value: f64, lo: f64, hi: f64 },
    #[error("labels contain a single class")]
    DegenerateLabels,
    #[error("value {0} is outside the allowed range")]
    RangeViolation(f64),
    #[error("division by zero")]
    DivisionByZero,
    #[error("scores lack a genuine or impostor class")]
    MissingClass,
    #[error("malformed ciphertext: {0}")]
    MalformedCiphertext(String),
    #[error("invalid protection chain: {0}")]
    InvalidChain(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("homomorphic evaluation failed: {0}")]
    He(#[from] HeError),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::InvalidConfig(e.to_string())
    }
}
