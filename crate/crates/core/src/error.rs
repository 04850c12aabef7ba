use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header {path}: {reason}")]
    Header { path: PathBuf, reason: String },

    #[error("payload length mismatch: header implies {expected} bytes, found {found}")]
    PayloadLength { expected: usize, found: usize },

    #[error("probability row at voxel {voxel} sums to {sum} (expected 1)")]
    Normalization { voxel: usize, sum: f64 },

    #[error("dimension mismatch: {0:?} vs {1:?}")]
    DimMismatch([usize; 3], [usize; 3]),

    #[error("spacing mismatch: {0:?} vs {1:?}")]
    SpacingMismatch([f64; 3], [f64; 3]),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("mean shape is disconnected ({components} components)")]
    Disconnected { components: usize },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("degenerate zero-length edge ({0}, {1})")]
    DegenerateEdge(usize, usize),

    #[error("degenerate principal axis: leading eigenvalues {0} and {1} are not separated")]
    DegenerateAxis(f64, f64),

    #[error("mesh fit did not converge: mean surface distance {distance:.3} voxels exceeds {limit}")]
    FitNotConverged { distance: f64, limit: f64 },

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("zone {0} is empty")]
    EmptyZone(usize),

    #[error("width mismatch: expected {expected}, found {found}")]
    WidthMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("target is not a valid one-hot encoding: {0}")]
    NotOneHot(String),

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("mass placement failed: {0}")]
    Placement(String),

    #[error("unknown label {0:?}")]
    UnknownLabel(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{stage}: {source}")]
    Stage { stage: &'static str, source: Box<Error> },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
