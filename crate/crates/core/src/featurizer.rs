//! Per-feature normalization and histogram featurization.
//!
//! Each of the six features is mapped into `[0, 1]` by a fitted
//! [`Normalizer`], then counted into `K` equal-width bins. The six histograms
//! are concatenated feature-major to form the network input.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::{FeatureKind, PointCloud, NUM_FEATURES};

pub const DEFAULT_BINS: usize = 20;

/// How the effective value range of each feature is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum NormStrategy {
    /// Minimum to maximum over the training values.
    FullRange,
    /// User-supplied bounds per feature.
    ManualClip {
        lo: [f64; NUM_FEATURES],
        hi: [f64; NUM_FEATURES],
    },
    /// Mean plus/minus two population standard deviations.
    StatClip,
}

impl NormStrategy {
    pub fn tag(&self) -> &'static str {
        match self {
            NormStrategy::FullRange => "full_range",
            NormStrategy::ManualClip { .. } => "manual_clip",
            NormStrategy::StatClip => "stat_clip",
        }
    }
}

/// Whether histogram counts enter the network as-is or as per-feature frequencies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    #[default]
    Raw,
    Density,
}

impl std::str::FromStr for InputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(InputMode::Raw),
            "density" => Ok(InputMode::Density),
            other => Err(Error::InvalidConfig(format!(
                "unknown input mode '{other}'"
            ))),
        }
    }
}

/// Fitted per-feature ranges plus the binning parameters that go with them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub strategy: String,
    pub lo: [f64; NUM_FEATURES],
    pub hi: [f64; NUM_FEATURES],
    pub bins: usize,
    #[serde(default)]
    pub input_mode: InputMode,
}

impl Normalizer {
    pub fn from_bounds(
        strategy: &str,
        lo: [f64; NUM_FEATURES],
        hi: [f64; NUM_FEATURES],
        bins: usize,
    ) -> Result<Self> {
        if bins == 0 {
            return Err(Error::InvalidConfig("bin count must be at least 1".into()));
        }
        for f in FeatureKind::ALL {
            let (l, h) = (lo[f.index()], hi[f.index()]);
            if !(l.is_finite() && h.is_finite()) {
                return Err(Error::InvalidConfig(format!("non-finite bounds for {f}")));
            }
            if !(l < h) {
                return Err(Error::DegenerateFeature(f));
            }
        }
        Ok(Normalizer {
            strategy: strategy.to_string(),
            lo,
            hi,
            bins,
            input_mode: InputMode::Raw,
        })
    }

    pub fn with_bins(mut self, bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::InvalidConfig("bin count must be at least 1".into()));
        }
        self.bins = bins;
        Ok(self)
    }

    pub fn with_input_mode(mut self, mode: InputMode) -> Self {
        self.input_mode = mode;
        self
    }

    pub fn width(&self, feature: FeatureKind) -> f64 {
        self.hi[feature.index()] - self.lo[feature.index()]
    }

    /// Histogram of `cloud` with this normalizer's bin count.
    pub fn featurize(&self, cloud: &PointCloud) -> HistogramFeature {
        featurize(cloud, self, self.bins)
    }

    /// Network input vector for `cloud`.
    pub fn input_vector(&self, cloud: &PointCloud) -> Vec<f64> {
        counts_to_input(&self.featurize(cloud), self.input_mode)
    }

    pub fn input_dim(&self) -> usize {
        NUM_FEATURES * self.bins
    }
}

/// Fits per-feature ranges on training clouds. Missing values are ignored.
pub fn fit_normalizer<'a, I>(train: I, strategy: &NormStrategy) -> Result<Normalizer>
where
    I: IntoIterator<Item = &'a PointCloud>,
{
    if let NormStrategy::ManualClip { lo, hi } = strategy {
        return Normalizer::from_bounds(strategy.tag(), *lo, *hi, DEFAULT_BINS);
    }

    let mut values: [Vec<f64>; NUM_FEATURES] = Default::default();
    for cloud in train {
        for p in cloud.points() {
            for (f, v) in p.iter().enumerate() {
                if let Some(v) = v {
                    values[f].push(*v);
                }
            }
        }
    }

    let mut lo = [0.0; NUM_FEATURES];
    let mut hi = [0.0; NUM_FEATURES];
    for f in FeatureKind::ALL {
        let vals = &values[f.index()];
        if vals.is_empty() {
            return Err(Error::UnfittableFeature(f));
        }
        let (l, h) = match strategy {
            NormStrategy::FullRange => {
                let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
                let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (min, max)
            }
            NormStrategy::StatClip => {
                let n = vals.len() as f64;
                let mean = vals.iter().sum::<f64>() / n;
                let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                let sd = var.sqrt();
                (mean - 2.0 * sd, mean + 2.0 * sd)
            }
            NormStrategy::ManualClip { .. } => unreachable!(),
        };
        if !(l < h) {
            return Err(Error::DegenerateFeature(f));
        }
        lo[f.index()] = l;
        hi[f.index()] = h;
    }
    Normalizer::from_bounds(strategy.tag(), lo, hi, DEFAULT_BINS)
}

/// Maps `v` into `[0, 1]`, clipping values outside the fitted range.
pub fn normalize(v: f64, feature: FeatureKind, norm: &Normalizer) -> f64 {
    let f = feature.index();
    ((v - norm.lo[f]) / (norm.hi[f] - norm.lo[f])).clamp(0.0, 1.0)
}

/// Bin of a normalized value; the last bin is closed at 1.0.
pub fn bin_index(u: f64, bins: usize) -> usize {
    ((u * bins as f64).floor() as usize).min(bins - 1)
}

/// Six `K`-bin histograms stored feature-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistogramFeature {
    bins: usize,
    counts: Vec<u32>,
}

impl HistogramFeature {
    pub fn zeros(bins: usize) -> Self {
        HistogramFeature {
            bins,
            counts: vec![0; NUM_FEATURES * bins],
        }
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn count(&self, feature: FeatureKind, bin: usize) -> u32 {
        self.counts[feature.index() * self.bins + bin]
    }

    pub fn feature_counts(&self, feature: FeatureKind) -> &[u32] {
        let start = feature.index() * self.bins;
        &self.counts[start..start + self.bins]
    }

    /// All counts, feature 0 bins first.
    pub fn as_slice(&self) -> &[u32] {
        &self.counts
    }

    fn increment(&mut self, feature: usize, bin: usize) {
        self.counts[feature * self.bins + bin] += 1;
    }
}

/// Counts each present value into its feature's histogram.
pub fn featurize(cloud: &PointCloud, norm: &Normalizer, bins: usize) -> HistogramFeature {
    assert!(bins >= 1, "bin count must be at least 1");
    let mut h = HistogramFeature::zeros(bins);
    for p in cloud.points() {
        for f in FeatureKind::ALL {
            if let Some(v) = p[f.index()] {
                h.increment(f.index(), bin_index(normalize(v, f, norm), bins));
            }
        }
    }
    h
}

pub fn counts_to_input(h: &HistogramFeature, mode: InputMode) -> Vec<f64> {
    match mode {
        InputMode::Raw => h.counts.iter().map(|c| f64::from(*c)).collect(),
        InputMode::Density => h
            .counts
            .chunks(h.bins)
            .flat_map(|row| {
                let total: u32 = row.iter().sum();
                row.iter().map(move |c| {
                    if total == 0 {
                        0.0
                    } else {
                        f64::from(*c) / f64::from(total)
                    }
                })
            })
            .collect(),
    }
}
