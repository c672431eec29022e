use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the virtual-marker pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {format} input: {message}")]
    Parse { format: &'static str, message: String },

    #[error("empty mesh: {0}")]
    EmptyMesh(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("index {index} out of range (len {len})")]
    OutOfRange { index: usize, len: usize },

    #[error("direction is not unit length (|d| = {norm})")]
    NonUnitDirection { norm: f64 },

    #[error("invalid rig: {0}")]
    InvalidRig(String),

    #[error("marker placement failed for bone '{bone}': all {rays} rays missed the mesh")]
    PlacementFailed { bone: String, rays: usize },

    #[error("missing skinning weights")]
    MissingWeights,

    #[error("missing joint limits for random pose sampling (joint '{0}')")]
    MissingLimits(String),

    #[error("vertex {0} is unreachable from every source")]
    Unreachable(usize),

    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("targets are not normalized: column {column} sums to {sum}")]
    UnnormalizedTargets { column: usize, sum: f64 },

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("voxel size mismatch: model expects {expected}, input uses {actual}")]
    VoxelSizeMismatch { expected: f64, actual: f64 },

    #[error("frame has no hit records")]
    MissingHits,

    #[error("mesh is not visible from any view")]
    Invisible,

    #[error("image encoding error: {0}")]
    Image(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(format: &'static str, message: impl Into<String>) -> Self {
        Error::Parse {
            format,
            message: message.into(),
        }
    }

    /// Short machine-readable tag for this error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::EmptyMesh(_) => "empty_mesh",
            Error::InvalidInput(_) => "invalid_input",
            Error::OutOfRange { .. } => "out_of_range",
            Error::NonUnitDirection { .. } => "non_unit_direction",
            Error::InvalidRig(_) => "invalid_rig",
            Error::PlacementFailed { .. } => "placement_failed",
            Error::MissingWeights => "missing_weights",
            Error::MissingLimits(_) => "missing_limits",
            Error::Unreachable(_) => "unreachable",
            Error::NotConverged { .. } => "not_converged",
            Error::NotPositiveDefinite { .. } => "not_positive_definite",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::UnnormalizedTargets { .. } => "unnormalized_targets",
            Error::Diverged { .. } => "diverged",
            Error::VoxelSizeMismatch { .. } => "voxel_size_mismatch",
            Error::MissingHits => "missing_hits",
            Error::Invisible => "invisible",
            Error::Image(_) => "image",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
