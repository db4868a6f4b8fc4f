//! Labeled radar point clouds and the dataset container.
//!
//! A point carries exactly six feature slots, any of which may be missing.
//! Missing values are stored as `None`, never as sentinel numbers.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

pub const NUM_FEATURES: usize = 6;
pub const NUM_CLASSES: usize = 5;

/// Reflection features, in the fixed column order used everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// Longitudinal offset from the object center (m).
    X,
    /// Lateral offset from the object center (m).
    Y,
    /// Vertical offset from the object center (m).
    Z,
    /// Range from the sensor (m).
    RadialDistance,
    /// Ego-motion compensated radial velocity (m/s).
    DopplerVelocity,
    /// Radar cross-section (dBsm).
    Rcs,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; NUM_FEATURES] = [
        FeatureKind::X,
        FeatureKind::Y,
        FeatureKind::Z,
        FeatureKind::RadialDistance,
        FeatureKind::DopplerVelocity,
        FeatureKind::Rcs,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::X => "x",
            FeatureKind::Y => "y",
            FeatureKind::Z => "z",
            FeatureKind::RadialDistance => "radial_distance",
            FeatureKind::DopplerVelocity => "doppler_velocity",
            FeatureKind::Rcs => "rcs",
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "x" => Ok(FeatureKind::X),
            "y" => Ok(FeatureKind::Y),
            "z" | "elevation" => Ok(FeatureKind::Z),
            "radial_distance" | "range" | "r" => Ok(FeatureKind::RadialDistance),
            "doppler_velocity" | "doppler" | "v" => Ok(FeatureKind::DopplerVelocity),
            "rcs" => Ok(FeatureKind::Rcs),
            other => Err(Error::InvalidConfig(format!("unknown feature '{other}'"))),
        }
    }
}

/// Object classes, in the fixed order used for logits and confusion matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassId {
    Car,
    Pedestrian,
    Overridable,
    TwoWheeler,
    Underridable,
}

impl ClassId {
    pub const ALL: [ClassId; NUM_CLASSES] = [
        ClassId::Car,
        ClassId::Pedestrian,
        ClassId::Overridable,
        ClassId::TwoWheeler,
        ClassId::Underridable,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassId::Car => "car",
            ClassId::Pedestrian => "pedestrian",
            ClassId::Overridable => "overridable",
            ClassId::TwoWheeler => "two_wheeler",
            ClassId::Underridable => "underridable",
        }
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ClassId::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown class '{s}'")))
    }
}

/// One reflection: six optional feature values.
pub type Point = [Option<f64>; NUM_FEATURES];

/// The reflections of one object in one measurement cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
    pub label: ClassId,
    pub track_id: String,
}

impl PointCloud {
    /// Builds a cloud, rejecting points whose six slots are all missing.
    pub fn new(points: Vec<Point>, label: ClassId, track_id: impl Into<String>) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            if p.iter().all(Option::is_none) {
                return Err(Error::InvalidConfig(format!(
                    "point {i} has no present values"
                )));
            }
            if p.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "point {i} has a non-finite value"
                )));
            }
        }
        Ok(PointCloud {
            points,
            label,
            track_id: track_id.into(),
        })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn value(&self, point: usize, feature: FeatureKind) -> Option<f64> {
        self.points.get(point).and_then(|p| p[feature.index()])
    }

    /// Present values of one feature, in point order.
    pub fn feature_values(&self, feature: FeatureKind) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().filter_map(move |p| p[feature.index()])
    }

    /// Marks a value missing. Callers must follow up with `drop_empty_points`.
    pub(crate) fn clear_value(&mut self, point: usize, feature: FeatureKind) {
        self.points[point][feature.index()] = None;
    }

    pub(crate) fn drop_empty_points(&mut self) {
        self.points.retain(|p| p.iter().any(Option::is_some));
    }

    pub(crate) fn points_mut(&mut self) -> &mut [Point] {
        &mut self.points
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Samples plus an optional split assignment per sample.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    samples: Vec<PointCloud>,
    splits: Vec<Option<Split>>,
}

impl Dataset {
    pub fn new(samples: Vec<PointCloud>) -> Self {
        let splits = vec![None; samples.len()];
        Dataset { samples, splits }
    }

    /// Builds an already-split dataset from per-split sample lists.
    pub fn from_splits(
        train: Vec<PointCloud>,
        val: Vec<PointCloud>,
        test: Vec<PointCloud>,
    ) -> Self {
        let mut samples = Vec::with_capacity(train.len() + val.len() + test.len());
        let mut splits = Vec::with_capacity(samples.capacity());
        for (split, part) in [
            (Split::Train, train),
            (Split::Val, val),
            (Split::Test, test),
        ] {
            splits.extend(std::iter::repeat_n(Some(split), part.len()));
            samples.extend(part);
        }
        Dataset { samples, splits }
    }

    pub fn samples(&self) -> &[PointCloud] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn split_of(&self, index: usize) -> Option<Split> {
        self.splits.get(index).copied().flatten()
    }

    /// Samples assigned to `split`, in dataset order.
    pub fn split_samples(&self, split: Split) -> Vec<&PointCloud> {
        self.samples
            .iter()
            .zip(&self.splits)
            .filter(|(_, s)| **s == Some(split))
            .map(|(c, _)| c)
            .collect()
    }

    /// Owned copy of one split's samples.
    pub fn split_cloned(&self, split: Split) -> Vec<PointCloud> {
        self.split_samples(split).into_iter().cloned().collect()
    }

    /// Classes with at least one sample anywhere in the dataset.
    pub fn classes_present(&self) -> Vec<ClassId> {
        let mut seen = [false; NUM_CLASSES];
        for s in &self.samples {
            seen[s.label.index()] = true;
        }
        ClassId::ALL
            .into_iter()
            .filter(|c| seen[c.index()])
            .collect()
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        Ok(Dataset::new(read_clouds(reader)?))
    }

    pub fn write_jsonl<W: Write>(&self, writer: W) -> Result<()> {
        write_clouds(&self.samples, writer)
    }
}

/// Assigns whole tracks to train/val/test.
///
/// Tracks are shuffled with `seed`, then handed out greedily: each split takes
/// tracks until its sample quota is met, then the next split takes over. A
/// split is never left empty while tracks remain for it.
pub fn split_by_track(dataset: &Dataset, fractions: [f64; 3], seed: u64) -> Result<Dataset> {
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("cannot split an empty dataset".into()));
    }
    if fractions.iter().any(|f| !(*f > 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "split fractions must be positive and sum to 1, got {fractions:?}"
        )));
    }

    // Tracks in first-appearance order, so shuffling is reproducible.
    let mut order: Vec<&str> = Vec::new();
    let mut members: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, s) in dataset.samples.iter().enumerate() {
        members
            .entry(s.track_id.as_str())
            .or_insert_with(|| {
                order.push(s.track_id.as_str());
                Vec::new()
            })
            .push(i);
    }
    if order.len() < Split::ALL.len() {
        return Err(Error::InsufficientTracks {
            tracks: order.len(),
            splits: Split::ALL.len(),
        });
    }

    let mut rng = rng_from_seed(seed);
    order.shuffle(&mut rng);

    let total = dataset.len() as f64;
    let quotas = [
        (fractions[0] * total).round() as usize,
        (fractions[1] * total).round() as usize,
        usize::MAX,
    ];
    let mut filled = [0usize; 3];
    let mut current = 0usize;
    let mut splits = vec![None; dataset.len()];
    let track_count = order.len();
    for (t, track) in order.iter().enumerate() {
        let remaining_tracks = track_count - t;
        let later_splits = Split::ALL.len() - 1 - current;
        let should_advance = filled[current] > 0
            && (filled[current] >= quotas[current] || remaining_tracks <= later_splits);
        if current < 2 && should_advance {
            current += 1;
        }
        for &i in &members[track] {
            splits[i] = Some(Split::ALL[current]);
        }
        filled[current] += members[track].len();
    }

    Ok(Dataset {
        samples: dataset.samples.clone(),
        splits,
    })
}

/// Per-class sample counts in one split, or the whole dataset when `split` is `None`.
pub fn class_counts(dataset: &Dataset, split: Option<Split>) -> BTreeMap<ClassId, usize> {
    let mut counts: BTreeMap<ClassId, usize> = ClassId::ALL.iter().map(|c| (*c, 0)).collect();
    for (s, assigned) in dataset.samples.iter().zip(&dataset.splits) {
        if split.is_none() || *assigned == split {
            *counts.get_mut(&s.label).expect("all classes seeded") += 1;
        }
    }
    counts
}

#[derive(Serialize, Deserialize)]
struct CloudLine {
    track_id: String,
    label: ClassId,
    points: Vec<Vec<Option<f64>>>,
}

pub fn read_clouds<R: BufRead>(reader: R) -> Result<Vec<PointCloud>> {
    let mut clouds = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: CloudLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let mut points = Vec::with_capacity(raw.points.len());
        for (i, p) in raw.points.into_iter().enumerate() {
            let point: Point = p.try_into().map_err(|p: Vec<Option<f64>>| Error::Parse {
                line: lineno,
                message: format!("point {i} has {} values, expected {NUM_FEATURES}", p.len()),
            })?;
            points.push(point);
        }
        let cloud = PointCloud::new(points, raw.label, raw.track_id).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        clouds.push(cloud);
    }
    Ok(clouds)
}

pub fn write_clouds<W: Write>(clouds: &[PointCloud], mut writer: W) -> Result<()> {
    for c in clouds {
        let line = CloudLine {
            track_id: c.track_id.clone(),
            label: c.label,
            points: c.points.iter().map(|p| p.to_vec()).collect(),
        };
        serde_json::to_writer(&mut writer, &line)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}
