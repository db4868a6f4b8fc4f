mod common;

use common::*;
use proptest::prelude::*;
use refhist::featurizer::{
    bin_index, counts_to_input, featurize, normalize, InputMode, Normalizer,
};
use refhist::perturb::ablate_cloud;
use refhist::pointcloud::{FeatureKind, PointCloud, NUM_FEATURES};

fn bounds_strategy() -> impl Strategy<Value = ([f64; NUM_FEATURES], [f64; NUM_FEATURES])> {
    prop::array::uniform6((-2.0f64..1.0, 0.01f64..3.0)).prop_map(|pairs| {
        let lo = pairs.map(|(lo, _)| lo);
        let hi = pairs.map(|(lo, w)| lo + w);
        (lo, hi)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn featurize_matches_brute_force_on_unit_range(cloud in cloud_strategy(24), bins in 1usize..=40) {
        let norm = unit_normalizer(bins);
        prop_assert_eq!(featurize(&cloud, &norm, bins).as_slice().to_vec(), brute_force_histogram(&cloud, &norm, bins));
    }

    #[test]
    fn featurize_matches_brute_force_on_random_ranges(
        cloud in cloud_strategy(24),
        (lo, hi) in bounds_strategy(),
        bins in 1usize..=40,
    ) {
        let norm = Normalizer::from_bounds("manual_clip", lo, hi, bins).unwrap();
        prop_assert_eq!(featurize(&cloud, &norm, bins).as_slice().to_vec(), brute_force_histogram(&cloud, &norm, bins));
    }

    #[test]
    fn deleting_a_value_touches_one_bin(cloud in cloud_strategy(24), pick in any::<prop::sample::Index>()) {
        let present: Vec<(usize, FeatureKind)> = cloud
            .points()
            .iter()
            .enumerate()
            .flat_map(|(i, p)| (0..NUM_FEATURES).filter(move |f| p[*f].is_some()).map(move |f| (i, feature_of(f))))
            .collect();
        prop_assume!(!present.is_empty());
        let (point, feature) = present[pick.index(present.len())];
        let norm = unit_normalizer(20);
        let before = featurize(&cloud, &norm, 20);
        let after = featurize(&ablate_cloud(&cloud, &[(point, feature)]).unwrap(), &norm, 20);
        let diffs: Vec<(usize, i64)> = before
            .as_slice()
            .iter()
            .zip(after.as_slice())
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(i, (a, b))| (i, *a as i64 - *b as i64))
            .collect();
        prop_assert_eq!(diffs.len(), 1);
        let (index, delta) = diffs[0];
        prop_assert_eq!(delta, 1);
        prop_assert_eq!(index / 20, feature.index());
        let v = cloud.value(point, feature).unwrap();
        prop_assert_eq!(index % 20, bin_index(normalize(v, feature, &norm), 20));
    }

    #[test]
    fn point_order_is_irrelevant(
        (cloud, shuffled) in cloud_strategy(24).prop_flat_map(|c| {
            let points = c.points().to_vec();
            (Just(c), Just(points).prop_shuffle())
        }),
        bins in 1usize..=30,
    ) {
        let norm = unit_normalizer(bins);
        let permuted = PointCloud::new(shuffled, cloud.label, "perm").unwrap();
        prop_assert_eq!(featurize(&cloud, &norm, bins), featurize(&permuted, &norm, bins));
    }

    #[test]
    fn small_shifts_inside_a_bin_change_nothing(cloud in cloud_strategy(24), frac in -0.999f64..0.999) {
        let bins = 20;
        let norm = unit_normalizer(bins);
        // Move each interior value by `frac` of its distance to the nearest edge.
        let points = cloud
            .points()
            .iter()
            .map(|p| {
                let mut q = *p;
                for slot in q.iter_mut() {
                    if let Some(v) = slot {
                        if *v > 0.0 && *v < 1.0 {
                            let k = bin_index(*v, bins) as f64;
                            let (left, right) = (k / bins as f64, (k + 1.0) / bins as f64);
                            let room = (*v - left).min(right - *v);
                            *v += frac * room;
                        }
                    }
                }
                q
            })
            .collect();
        let moved = PointCloud::new(points, cloud.label, "moved").unwrap();
        prop_assert_eq!(featurize(&cloud, &norm, bins), featurize(&moved, &norm, bins));
    }

    #[test]
    fn density_rows_sum_to_one_or_zero(cloud in cloud_strategy(24)) {
        let norm = unit_normalizer(20);
        let h = featurize(&cloud, &norm, 20);
        let density = counts_to_input(&h, InputMode::Density);
        let raw = counts_to_input(&h, InputMode::Raw);
        for f in 0..NUM_FEATURES {
            let present = cloud.feature_values(feature_of(f)).count();
            let row: f64 = density[f * 20..(f + 1) * 20].iter().sum();
            let raw_row: f64 = raw[f * 20..(f + 1) * 20].iter().sum();
            prop_assert_eq!(raw_row, present as f64);
            if present == 0 {
                prop_assert_eq!(row, 0.0);
            } else {
                prop_assert!((row - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normalize_stays_in_unit_interval(v in -1e6f64..1e6, (lo, hi) in bounds_strategy(), f in 0usize..NUM_FEATURES) {
        let norm = Normalizer::from_bounds("manual_clip", lo, hi, 20).unwrap();
        let u = normalize(v, feature_of(f), &norm);
        prop_assert!((0.0..=1.0).contains(&u));
    }
}
