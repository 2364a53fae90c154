//! Error type shared by the whole crate.

use std::path::PathBuf;

/// Errors raised by pipeline operations.
///
/// Variants are grouped so callers can distinguish validation failures
/// (bad arguments, malformed configs) from IO failures.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image decode/encode error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("malformed json in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {reason}")]
    BadFile { path: PathBuf, reason: String },

    #[error("missing metadata sidecar {path}")]
    MissingSidecar { path: PathBuf },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("color correction matrix is singular (|det| <= 1e-8)")]
    SingularCcm,

    #[error("noise stages are not permitted in the degradation config")]
    NoiseStageForbidden,

    #[error("degenerate latent batch: standard deviation is zero")]
    DegenerateBatch,

    #[error("insufficient samples for noise estimation: bin {bin} holds {count} < 100")]
    InsufficientSamples { bin: usize, count: usize },
}

impl Error {
    /// True when the error stems from the filesystem rather than bad input.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Image { .. }
                | Error::Json { .. }
                | Error::BadFile { .. }
                | Error::MissingSidecar { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
