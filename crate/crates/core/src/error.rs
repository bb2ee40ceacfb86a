//! Crate-wide error types.

use std::path::PathBuf;

use thiserror::Error;

use crate::conditioning::ConditionMode;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two tensors or a tensor and a config disagree on shape.
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// A configuration value is out of its valid range.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// RIFF/WAVE container is structurally broken (bad magic, truncated
    /// chunks, missing fmt/data).
    #[error("malformed WAV {path}: {detail}")]
    WavMalformed { path: PathBuf, detail: String },

    /// WAV parsed, but the encoding is not 16-bit PCM.
    #[error("unsupported WAV codec in {path}: {detail}")]
    WavUnsupported { path: PathBuf, detail: String },

    /// Input signal shorter than one analysis frame, or fewer frames than
    /// the stacking depth.
    #[error("input too short: {0}")]
    InputTooShort(String),

    /// A taxonomy lookup was asked for a label it has never seen.
    #[error("unknown {level} label {label:?}")]
    UnknownLabel { level: &'static str, label: String },

    /// Dataset directory missing, empty, or not in the expected layout.
    #[error("dataset error: {0}")]
    Dataset(String),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    /// Training produced a non-finite loss; the run is aborted with the
    /// position of the offending batch.
    #[error("non-finite {what} at epoch {epoch}, batch {batch}; aborting")]
    NonFiniteLoss {
        what: &'static str,
        epoch: usize,
        batch: usize,
    },

    /// AUC requested for a group that lacks one of the two classes.
    #[error("undefined AUC: {0}")]
    UndefinedAuc(String),

    #[error("condition mode mismatch: checkpoint has {found:?}, caller expects {expected:?}")]
    ModeMismatch {
        found: ConditionMode,
        expected: ConditionMode,
    },

    /// A numeric procedure hit a non-finite intermediate.
    #[error("numeric error: {0}")]
    Numeric(String),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Failures while reading or writing the binary checkpoint container.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad checkpoint magic")]
    BadMagic,

    #[error("unsupported checkpoint format version {found}")]
    UnsupportedVersion { found: u8 },

    #[error("truncated checkpoint while reading {what}")]
    Truncated { what: &'static str },

    #[error("checkpoint metadata: {0}")]
    Metadata(String),

    #[error("checkpoint tensor table: {0}")]
    TensorTable(String),

    #[error("checkpoint i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
