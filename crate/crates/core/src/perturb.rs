//! Evaluation-time perturbations and removal-based prediction analysis.

use std::fmt::Write as _;

use rand::seq::index::sample as sample_indices;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::featurizer::Normalizer;
use crate::pipeline::{evaluate, CloudClassifier, EvalReport};
use crate::pointcloud::{ClassId, FeatureKind, PointCloud};
use crate::seed::{derive_index_seed, rng_from_seed};

/// Gaussian noise with standard deviation `sigma` in normalized feature units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
}

/// Removal of a fraction of one feature's present values across a whole set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RemovalSpec {
    pub feature: FeatureKind,
    pub fraction: f64,
    pub seed: u64,
}

/// Adds noise to every present value. A draw `e` moves a raw value by
/// `e * (hi - lo)` of its feature, i.e. by `e` after normalization.
pub fn add_noise(
    samples: &[PointCloud],
    norm: &Normalizer,
    spec: NoiseSpec,
) -> Result<Vec<PointCloud>> {
    if !(spec.sigma >= 0.0 && spec.sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "noise sigma must be non-negative, got {}",
            spec.sigma
        )));
    }
    if spec.sigma == 0.0 {
        return Ok(samples.to_vec());
    }
    let dist = Normal::new(0.0, spec.sigma).expect("sigma checked");
    let widths: Vec<f64> = FeatureKind::ALL.iter().map(|f| norm.width(*f)).collect();
    Ok(samples
        .par_iter()
        .enumerate()
        .map(|(i, cloud)| {
            let mut rng = rng_from_seed(derive_index_seed(spec.seed, i as u64));
            let mut out = cloud.clone();
            for p in out.points_mut() {
                for (slot, width) in p.iter_mut().zip(&widths) {
                    if let Some(v) = slot {
                        *v += dist.sample(&mut rng) * width;
                    }
                }
            }
            out
        })
        .collect())
}

/// Marks exactly `round(fraction * present)` values of `spec.feature` missing,
/// chosen uniformly over the whole set. Reflections left without any value
/// are dropped.
pub fn remove_values(samples: &[PointCloud], spec: RemovalSpec) -> Result<Vec<PointCloud>> {
    if !(0.0..=1.0).contains(&spec.fraction) {
        return Err(Error::InvalidConfig(format!(
            "removal fraction must lie in [0, 1], got {}",
            spec.fraction
        )));
    }
    if spec.fraction == 0.0 {
        return Ok(samples.to_vec());
    }
    let positions: Vec<(usize, usize)> = samples
        .iter()
        .enumerate()
        .flat_map(|(s, cloud)| {
            cloud
                .points()
                .iter()
                .enumerate()
                .filter(|(_, p)| p[spec.feature.index()].is_some())
                .map(move |(i, _)| (s, i))
        })
        .collect();
    let count = (spec.fraction * positions.len() as f64).round() as usize;
    let mut rng = rng_from_seed(spec.seed);
    let mut out = samples.to_vec();
    for k in sample_indices(&mut rng, positions.len(), count) {
        let (s, i) = positions[k];
        out[s].clear_value(i, spec.feature);
    }
    out.iter_mut().for_each(PointCloud::drop_empty_points);
    Ok(out)
}

/// Outcome of removing selected values from one cloud and predicting again.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub label: ClassId,
    pub targets: Vec<(usize, FeatureKind)>,
    pub original_class: ClassId,
    pub ablated_class: ClassId,
    pub original_probabilities: Vec<f64>,
    pub ablated_probabilities: Vec<f64>,
    /// Ablated minus original probability, per class.
    pub probability_deltas: Vec<f64>,
}

impl AblationReport {
    pub fn flipped(&self) -> bool {
        self.original_class != self.ablated_class
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Copy of `cloud` with the targeted values marked missing.
pub fn ablate_cloud(cloud: &PointCloud, targets: &[(usize, FeatureKind)]) -> Result<PointCloud> {
    let mut out = cloud.clone();
    for &(point, feature) in targets {
        if out.value(point, feature).is_none() {
            return Err(Error::NothingToAblate { point, feature });
        }
        out.clear_value(point, feature);
    }
    out.drop_empty_points();
    Ok(out)
}

pub fn ablate_sample<C: CloudClassifier + ?Sized>(
    classifier: &C,
    cloud: &PointCloud,
    targets: &[(usize, FeatureKind)],
) -> Result<AblationReport> {
    let ablated = ablate_cloud(cloud, targets)?;
    let (original_class, original_probabilities) = classifier.predict(cloud)?;
    let (ablated_class, ablated_probabilities) = classifier.predict(&ablated)?;
    let probability_deltas = ablated_probabilities
        .iter()
        .zip(&original_probabilities)
        .map(|(a, o)| a - o)
        .collect();
    Ok(AblationReport {
        label: cloud.label,
        targets: targets.to_vec(),
        original_class,
        ablated_class,
        original_probabilities,
        ablated_probabilities,
        probability_deltas,
    })
}

/// The reflection holding the largest present value of `feature`.
pub fn largest_value_target(
    cloud: &PointCloud,
    feature: FeatureKind,
) -> Option<(usize, FeatureKind)> {
    cloud
        .points()
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p[feature.index()].map(|v| (i, v)))
        .fold(None, |best: Option<(usize, f64)>, (i, v)| match best {
            Some((_, b)) if b >= v => best,
            _ => Some((i, v)),
        })
        .map(|(i, _)| (i, feature))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub feature: FeatureKind,
    pub fraction: f64,
    pub report: EvalReport,
}

/// Evaluates the classifier after removing each `fraction` of each `feature`.
/// The removal seed depends only on the feature, so different classifiers
/// swept with the same `seed` see identical perturbed sets.
pub fn importance_sweep<C: CloudClassifier + ?Sized>(
    classifier: &C,
    samples: &[PointCloud],
    fractions: &[f64],
    features: &[FeatureKind],
    seed: u64,
) -> Result<Vec<SweepCell>> {
    let mut cells = Vec::with_capacity(fractions.len() * features.len());
    for &feature in features {
        for &fraction in fractions {
            let spec = RemovalSpec {
                feature,
                fraction,
                seed: derive_index_seed(seed, feature.index() as u64),
            };
            let perturbed = remove_values(samples, spec)?;
            cells.push(SweepCell {
                feature,
                fraction,
                report: evaluate(classifier, &perturbed)?,
            });
        }
    }
    Ok(cells)
}

pub fn sweep_csv(cells: &[SweepCell]) -> String {
    let mut out = String::from("feature,fraction,balanced_accuracy\n");
    for c in cells {
        writeln!(
            out,
            "{},{},{}",
            c.feature, c.fraction, c.report.balanced_accuracy
        )
        .unwrap();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseCell {
    pub sigma: f64,
    pub report: EvalReport,
}

/// Evaluates the classifier under each noise level, with noise in the units of `norm`.
pub fn noise_sweep<C: CloudClassifier + ?Sized>(
    classifier: &C,
    norm: &Normalizer,
    samples: &[PointCloud],
    sigmas: &[f64],
    seed: u64,
) -> Result<Vec<NoiseCell>> {
    sigmas
        .iter()
        .map(|&sigma| {
            let noisy = add_noise(samples, norm, NoiseSpec { sigma, seed })?;
            Ok(NoiseCell {
                sigma,
                report: evaluate(classifier, &noisy)?,
            })
        })
        .collect()
}

pub fn noise_csv(model: &str, cells: &[NoiseCell]) -> String {
    let mut out = String::from("model,sigma,balanced_accuracy\n");
    for c in cells {
        writeln!(out, "{model},{},{}", c.sigma, c.report.balanced_accuracy).unwrap();
    }
    out
}
