use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("scene `{0}` contains no boxes")]
    EmptyScene(String),

    #[error("edge affinities need at least 2 boxes per scene (got {infra} infrastructure, {vehicle} vehicle)")]
    InsufficientBoxes { infra: usize, vehicle: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("no match survived the affinity gate")]
    NoMatches,

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("calibration result has status `{0}`, expected `ok`")]
    InvalidStatus(String),

    #[error("frame pair {0} carries no ground-truth extrinsic")]
    MissingGroundTruth(usize),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("could not place {wanted} non-overlapping boxes after {attempts} attempts")]
    PlacementFailure { wanted: usize, attempts: usize },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("{path}: parse error at {location}: {message}")]
    Parse {
        path: PathBuf,
        location: String,
        message: String,
    },

    #[error("{path}: schema error in {context}: {message}")]
    Schema {
        path: PathBuf,
        context: String,
        message: String,
    },

    #[error("{path}: matrix is not a rigid transform ({message})")]
    NotRigid { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
