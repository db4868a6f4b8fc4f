use thiserror::Error;

use crate::pointcloud::{ClassId, FeatureKind};

#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient tracks: {tracks} track(s) for {splits} splits")]
    InsufficientTracks { tracks: usize, splits: usize },

    #[error("unfittable feature {0}: no present values")]
    UnfittableFeature(FeatureKind),

    #[error("degenerate feature {0}: zero-width value range")]
    DegenerateFeature(FeatureKind),

    #[error("empty class {0}: no training samples")]
    EmptyClass(ClassId),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("nothing to ablate: point {point} feature {feature} is not a present value")]
    NothingToAblate { point: usize, feature: FeatureKind },

    #[error("capacity exceeded: cloud has {points} points, model capacity is {capacity}")]
    CapacityExceeded { points: usize, capacity: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
