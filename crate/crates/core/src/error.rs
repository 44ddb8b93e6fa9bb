use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type. Variants are grouped so callers can map them onto
/// coarse failure classes: configuration, data/format, numeric.
#[derive(Debug, Error)]
pub enum Error {
    // ---- image formats ----
    #[error("malformed PGM header: {0}")]
    MalformedHeader(String),
    #[error("truncated PGM payload: expected {expected} pixels, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("unsupported PGM maxval {0} (supported range 1..=255)")]
    UnsupportedMaxval(u32),
    #[error("pixel value {0} outside [0, 255] after rounding")]
    PixelOutOfRange(f64),

    // ---- binary containers (checkpoint, fingerprint) ----
    #[error("bad magic bytes, expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("version mismatch: file has {found}, supported {expected}")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("corrupt payload: {0}")]
    CorruptPayload(String),

    // ---- shapes and geometry ----
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid layer geometry: ({input} - {kernel} + 2*{pad}) must be a non-negative multiple of stride {stride}")]
    InvalidGeometry {
        input: usize,
        kernel: usize,
        pad: usize,
        stride: usize,
    },
    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },

    // ---- configuration ----
    #[error("invalid configuration: {0}")]
    Config(String),

    // ---- datasets ----
    #[error("dataset error: {0}")]
    Dataset(String),

    // ---- numerics ----
    #[error("constant input has zero standard deviation")]
    ConstantInput,
    #[error("zero vector has no canonical sign")]
    ZeroVector,
    #[error("matrix not symmetric at ({i}, {j}): |a_ij - a_ji| = {delta:e}")]
    NotSymmetric { i: usize, j: usize, delta: f64 },
    #[error("Jacobi eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {offdiag:e})")]
    JacobiNoConvergence { sweeps: usize, offdiag: f64 },
    #[error("class ordering not achieved: {0}")]
    OrderingNotAchieved(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Coarse failure class, used by the CLI to pick exit codes.
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            Config(_) | InvalidGeometry { .. } => ErrorClass::Config,
            MalformedHeader(_)
            | TruncatedPayload { .. }
            | UnsupportedMaxval(_)
            | PixelOutOfRange(_)
            | BadMagic { .. }
            | VersionMismatch { .. }
            | CorruptPayload(_)
            | Dataset(_)
            | IndexOutOfRange { .. }
            | ShapeMismatch(_)
            | Io(_) => ErrorClass::Data,
            ConstantInput
            | ZeroVector
            | NotSymmetric { .. }
            | JacobiNoConvergence { .. }
            | OrderingNotAchieved(_) => ErrorClass::Numeric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}
