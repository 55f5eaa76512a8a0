use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // ingestion
    #[error("band {band} missing in {dir}")]
    MissingBand { band: String, dir: PathBuf },
    #[error("malformed raster {path}: {reason}")]
    MalformedRaster { path: PathBuf, reason: String },
    #[error("z-score normalization requested without per-band statistics")]
    MissingStats,
    #[error("non-finite input: {0}")]
    NonFiniteInput(String),
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("label list is empty")]
    EmptyLabelList,
    #[error("patch {0:?} referenced by a list is not present under the dataset root")]
    UnknownPatchInList(String),
    #[error("domain {0} has no training patches")]
    EmptyDomain(&'static str),

    // classifier
    #[error("label set is empty")]
    EmptyLabels,
    #[error("logits contain non-finite values")]
    NonFiniteLogits,
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    DivergedTraining { epoch: usize, loss: f64 },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    // fd metric
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is indefinite (min eigenvalue {0:e})")]
    IndefiniteMatrix(f64),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    // gan
    #[error("cannot normalize a zero matrix")]
    ZeroMatrix,
    #[error("discriminator scores contain non-finite values")]
    NonFiniteScores,
    #[error("training step diverged: {component} = {value}")]
    DivergedStep { component: String, value: f64 },

    // synthetic data / harness
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error("parse error: {0}")]
    ParseError(String),
    #[error("invalid value for `{key}`: {reason}")]
    ValidationError { key: String, reason: String },
    #[error("checkpoint mismatch: {0}")]
    VersionMismatch(String),
    #[error("usage: {0}")]
    UsageError(String),
    #[error("output directory {0} is locked by another run (remove .lock if stale)")]
    Locked(PathBuf),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape(expected: impl std::fmt::Debug, got: impl std::fmt::Debug) -> Self {
        Error::ShapeMismatch {
            expected: format!("{expected:?}"),
            got: format!("{got:?}"),
        }
    }

    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::UsageError(_) => 2,
            _ => 1,
        }
    }
}
