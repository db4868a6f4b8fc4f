//! Histogram-based classification of radar point clouds.
//!
//! Each object's reflections are turned into six per-feature histograms which
//! feed a small fully-connected network. The crate also provides a seeded
//! synthetic scene generator, a max-pooling point-set baseline, and the
//! noise/removal/ablation protocols used to compare the two.

pub mod baseline;
pub mod error;
pub mod featurizer;
pub mod network;
pub mod perturb;
pub mod pipeline;
pub mod pointcloud;
pub mod seed;
pub mod synthgen;

pub use error::{Error, Result};
pub use featurizer::{
    featurize, fit_normalizer, normalize, HistogramFeature, InputMode, NormStrategy, Normalizer,
};
pub use network::{count_parameters, MlpConfig, MlpModel};
pub use pipeline::{evaluate, train, CloudClassifier, EvalReport, RefHist, TrainConfig};
pub use pointcloud::{ClassId, Dataset, FeatureKind, PointCloud, Split};
