//! Seeded synthetic radar scenes.
//!
//! Objects are simulated as tracks: each track draws a latent state (range,
//! azimuth, radial speed, RCS level, size) once, and every measurement cycle
//! of the track jitters around it. Reflections are scattered inside the
//! class's bounding extent. The sensor measures each reflection in range,
//! azimuth and elevation with Gaussian errors; the measured position is then
//! converted back to Cartesian coordinates relative to the object center, so
//! angular errors grow with distance the way they do on a real sensor.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::{
    ClassId, Dataset, FeatureKind, Point, PointCloud, NUM_CLASSES, NUM_FEATURES,
};
use crate::seed::rng_from_seed;

/// The profile file shipped with the crate.
pub const DEFAULT_PROFILES_JSON: &str = include_str!("../profiles/default_v1.json");
pub const DEFAULT_PROFILES_VERSION: u32 = 1;

/// Ratio of the default class budgets (car, pedestrian, overridable,
/// two-wheeler, underridable).
pub const DEFAULT_CLASS_RATIO: [usize; NUM_CLASSES] = [97, 27, 31, 11, 23];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProfile {
    /// Half-widths of the reflection scatter box (m).
    pub extent: [f64; 3],
    /// Vertical shift of reflections relative to the object center (m).
    pub z_offset: f64,
    /// Height of the object center above ground (m).
    pub center_height: f64,
    pub speed_mean: f64,
    pub speed_sd: f64,
    /// Per-reflection Doppler scatter around the track speed (m/s).
    pub doppler_spread: f64,
    pub rcs_mean: f64,
    pub rcs_track_sd: f64,
    pub rcs_spread: f64,
    /// Inclusive bounds of the uniform point count per cycle.
    pub points: [usize; 2],
    /// Per-feature probability that a value is missing.
    pub missing: [f64; NUM_FEATURES],
    /// Inclusive bounds of the uniform track length in cycles.
    pub track_length: [usize; 2],
}

impl ClassProfile {
    pub fn validate(&self, class: ClassId) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(format!("profile {class}: {what}")));
        if self.extent.iter().any(|e| !(*e > 0.0)) {
            return bad("extents must be positive");
        }
        if self.missing.iter().any(|p| !(0.0..1.0).contains(p)) {
            return bad("missing probabilities must lie in [0, 1)");
        }
        if self.points[0] < 1 || self.points[0] > self.points[1] {
            return bad("point range must satisfy 1 <= min <= max");
        }
        if self.track_length[0] < 1 || self.track_length[0] > self.track_length[1] {
            return bad("track length range must satisfy 1 <= min <= max");
        }
        if [
            self.speed_sd,
            self.doppler_spread,
            self.rcs_track_sd,
            self.rcs_spread,
        ]
        .iter()
        .any(|s| !(*s >= 0.0))
        {
            return bad("spreads must be non-negative");
        }
        Ok(())
    }
}

/// Standard deviations of the sensor's measurement errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorNoise {
    pub range_sd: f64,
    pub azimuth_sd_deg: f64,
    pub elevation_sd_deg: f64,
    pub doppler_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSet {
    pub version: u32,
    #[serde(default)]
    pub description: String,
    pub sensor_height: f64,
    pub sensor_noise: SensorNoise,
    pub range: [f64; 2],
    pub max_azimuth_deg: f64,
    pub cycle_dt: f64,
    pub classes: BTreeMap<ClassId, ClassProfile>,
}

impl ProfileSet {
    pub fn default_v1() -> Self {
        serde_json::from_str(DEFAULT_PROFILES_JSON).expect("bundled profile file parses")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let set: ProfileSet = serde_json::from_str(text)?;
        Ok(set)
    }

    /// Profiles where the five classes differ only in reflection height.
    /// Every other feature is drawn from the same distribution for all classes.
    pub fn z_separable() -> Self {
        let mut set = Self::default_v1();
        set.description = "classes separated by z only".into();
        for (i, class) in ClassId::ALL.into_iter().enumerate() {
            set.classes.insert(
                class,
                ClassProfile {
                    extent: [1.0, 0.8, 0.2],
                    z_offset: 0.8 * i as f64,
                    center_height: 0.5,
                    speed_mean: 3.0,
                    speed_sd: 2.0,
                    doppler_spread: 0.5,
                    rcs_mean: 0.0,
                    rcs_track_sd: 3.0,
                    rcs_spread: 3.0,
                    points: [4, 16],
                    missing: [0.0; NUM_FEATURES],
                    track_length: [5, 20],
                },
            );
        }
        set
    }

    pub fn profile(&self, class: ClassId) -> Result<&ClassProfile> {
        self.classes
            .get(&class)
            .ok_or_else(|| Error::InvalidConfig(format!("no profile for class {class}")))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.range[0] > 0.0 && self.range[0] <= self.range[1]) {
            return Err(Error::InvalidConfig(
                "range must satisfy 0 < min <= max".into(),
            ));
        }
        if !(self.cycle_dt >= 0.0) || !(self.max_azimuth_deg >= 0.0) {
            return Err(Error::InvalidConfig(
                "cycle_dt and max_azimuth_deg must be non-negative".into(),
            ));
        }
        let n = self.sensor_noise;
        if [
            n.range_sd,
            n.azimuth_sd_deg,
            n.elevation_sd_deg,
            n.doppler_sd,
        ]
        .iter()
        .any(|s| !(*s >= 0.0))
        {
            return Err(Error::InvalidConfig(
                "sensor noise must be non-negative".into(),
            ));
        }
        for (class, profile) in &self.classes {
            profile.validate(*class)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    /// Samples per class, in class order.
    pub budgets: [usize; NUM_CLASSES],
    pub seed: u64,
    pub profiles: ProfileSet,
}

impl SceneConfig {
    /// Default profiles with `total` samples split in the default class ratio.
    pub fn with_total(total: usize, seed: u64) -> Self {
        SceneConfig {
            budgets: proportional_budgets(total, DEFAULT_CLASS_RATIO),
            seed,
            profiles: ProfileSet::default_v1(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.profiles.validate()?;
        for class in ClassId::ALL {
            if self.budgets[class.index()] > 0 {
                self.profiles.profile(class)?;
            }
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.budgets.iter().sum()
    }
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self::with_total(6000, 0)
    }
}

/// Largest-remainder apportionment of `total` by `ratio`.
pub fn proportional_budgets(total: usize, ratio: [usize; NUM_CLASSES]) -> [usize; NUM_CLASSES] {
    let denom: usize = ratio.iter().sum();
    let mut budgets = [0usize; NUM_CLASSES];
    let mut remainders = [(0usize, 0usize); NUM_CLASSES];
    for i in 0..NUM_CLASSES {
        budgets[i] = total * ratio[i] / denom;
        remainders[i] = (total * ratio[i] % denom, i);
    }
    let assigned: usize = budgets.iter().sum();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for (_, i) in remainders.iter().take(total - assigned) {
        budgets[*i] += 1;
    }
    budgets
}

fn normal(mean: f64, sd: f64) -> Normal<f64> {
    Normal::new(mean, sd).expect("validated non-negative spread")
}

/// Generates the corpus. Samples come out class by class, track by track.
pub fn generate(cfg: &SceneConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = rng_from_seed(cfg.seed);
    let set = &cfg.profiles;
    let mut samples = Vec::with_capacity(cfg.total());

    for class in ClassId::ALL {
        let budget = cfg.budgets[class.index()];
        if budget == 0 {
            continue;
        }
        let profile = set.profile(class)?;
        let mut produced = 0usize;
        let mut track_no = 0usize;
        while produced < budget {
            let len = rng
                .random_range(profile.track_length[0]..=profile.track_length[1])
                .min(budget - produced);
            let track_id = format!("{}-{track_no:05}", class.name());
            let state = TrackState::draw(set, profile, &mut rng);
            for cycle in 0..len {
                let points = state.cycle_points(set, profile, cycle, &mut rng);
                samples.push(PointCloud::new(points, class, track_id.clone())?);
            }
            produced += len;
            track_no += 1;
        }
    }
    Ok(Dataset::new(samples))
}

struct TrackState {
    range: f64,
    azimuth: f64,
    speed: f64,
    rcs: f64,
    scale: f64,
}

impl TrackState {
    fn draw<R: Rng + ?Sized>(set: &ProfileSet, profile: &ClassProfile, rng: &mut R) -> Self {
        let max_az = set.max_azimuth_deg.to_radians();
        TrackState {
            range: rng.random_range(set.range[0]..=set.range[1]),
            azimuth: if max_az > 0.0 {
                rng.random_range(-max_az..=max_az)
            } else {
                0.0
            },
            speed: normal(profile.speed_mean, profile.speed_sd).sample(rng),
            rcs: normal(profile.rcs_mean, profile.rcs_track_sd).sample(rng),
            scale: rng.random_range(0.85..=1.15),
        }
    }

    fn cycle_points<R: Rng + ?Sized>(
        &self,
        set: &ProfileSet,
        profile: &ClassProfile,
        cycle: usize,
        rng: &mut R,
    ) -> Vec<Point> {
        let range = (self.range - self.speed * set.cycle_dt * cycle as f64).max(1.0)
            + normal(0.0, 0.05).sample(rng);
        let (sin_az0, cos_az0) = self.azimuth.sin_cos();
        let center = [
            range * cos_az0,
            range * sin_az0,
            profile.center_height - set.sensor_height,
        ];
        let noise = set.sensor_noise;
        let doppler = normal(
            self.speed,
            (profile.doppler_spread.powi(2) + noise.doppler_sd.powi(2)).sqrt(),
        );
        let rcs = normal(self.rcs, profile.rcs_spread);
        let range_err = normal(0.0, noise.range_sd);
        let az_err = normal(0.0, noise.azimuth_sd_deg.to_radians());
        let el_err = normal(0.0, noise.elevation_sd_deg.to_radians());

        let n = rng.random_range(profile.points[0]..=profile.points[1]);
        (0..n)
            .map(|_| {
                let mut offset = [0.0; 3];
                for (o, e) in offset.iter_mut().zip(profile.extent) {
                    *o = self.scale * e * rng.random_range(-1.0..=1.0);
                }
                offset[2] += profile.z_offset;
                let pos = [
                    center[0] + offset[0],
                    center[1] + offset[1],
                    center[2] + offset[2],
                ];

                let true_range = (pos[0] * pos[0] + pos[1] * pos[1] + pos[2] * pos[2]).sqrt();
                let radial = (true_range + range_err.sample(rng)).max(0.1);
                let azimuth = pos[1].atan2(pos[0]) + az_err.sample(rng);
                let elevation = (pos[2] / true_range).asin() + el_err.sample(rng);
                let (sin_el, cos_el) = elevation.sin_cos();
                let (sin_az, cos_az) = azimuth.sin_cos();
                let measured = [
                    radial * cos_el * cos_az,
                    radial * cos_el * sin_az,
                    radial * sin_el,
                ];

                let values = [
                    measured[0] - center[0],
                    measured[1] - center[1],
                    measured[2] - center[2],
                    radial,
                    doppler.sample(rng),
                    rcs.sample(rng),
                ];

                let mut point: Point = [None; NUM_FEATURES];
                for (f, v) in values.into_iter().enumerate() {
                    if rng.random::<f64>() >= profile.missing[f] {
                        point[f] = Some(v);
                    }
                }
                if point.iter().all(Option::is_none) {
                    point[FeatureKind::RadialDistance.index()] = Some(radial);
                }
                point
            })
            .collect()
    }
}

/// Copy of `cloud` with one extra reflection whose `feature` is `value`.
/// The other slots of the new reflection hold the cloud's per-feature means.
pub fn with_outlier(cloud: &PointCloud, feature: FeatureKind, value: f64) -> Result<PointCloud> {
    let mut point: Point = [None; NUM_FEATURES];
    for f in FeatureKind::ALL {
        let vals: Vec<f64> = cloud.feature_values(f).collect();
        if !vals.is_empty() {
            point[f.index()] = Some(vals.iter().sum::<f64>() / vals.len() as f64);
        }
    }
    point[feature.index()] = Some(value);
    let mut points = cloud.points().to_vec();
    points.push(point);
    PointCloud::new(points, cloud.label, cloud.track_id.clone())
}
