mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use refhist::baseline::{encode_points, Baseline, PointNetConfig, PointNetModel};
use refhist::pipeline::CloudClassifier;
use refhist::pointcloud::{ClassId, PointCloud, NUM_FEATURES};
use refhist::seed::rng_from_seed;
use refhist::Error;

fn random_model(seed: u64) -> PointNetModel {
    let mut rng = rng_from_seed(seed);
    let config = PointNetConfig {
        point_layers: (0..rng.random_range(1..=3))
            .map(|_| rng.random_range(1..=10))
            .collect(),
        head_layers: (0..rng.random_range(0..=2))
            .map(|_| rng.random_range(1..=10))
            .collect(),
        ..Default::default()
    };
    let mut model = PointNetModel::new(config, &mut rng).unwrap();
    for layer in model.layers_mut() {
        layer
            .b
            .iter_mut()
            .for_each(|b| *b = rng.random_range(-0.5..0.5));
    }
    model
}

fn random_inputs(seed: u64) -> (Vec<[f64; NUM_FEATURES]>, ClassId, f64) {
    let mut rng = rng_from_seed(seed ^ 0x5eed);
    let n = rng.random_range(1..=12);
    let inputs = (0..n)
        .map(|_| {
            let mut p = [0.0; NUM_FEATURES];
            for v in p.iter_mut() {
                // Missing values are encoded as exact zeros.
                *v = if rng.random::<f64>() < 0.2 {
                    0.0
                } else {
                    rng.random_range(0.0..1.0)
                };
            }
            p
        })
        .collect();
    (
        inputs,
        ClassId::ALL[rng.random_range(0..5)],
        rng.random_range(0.2..3.0),
    )
}

fn baseline_for(seed: u64) -> Baseline {
    Baseline {
        model: random_model(seed),
        normalizer: unit_normalizer(20),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(150))]

    #[test]
    fn gradients_match_finite_differences(seed in any::<u64>()) {
        let model = random_model(seed);
        let (inputs, label, weight) = random_inputs(seed);
        let (_, analytic) = model.loss_and_grad(&inputs, label, weight).unwrap();
        let numeric = pointnet_numeric_gradients(&model, &inputs, label, weight);
        let layers: Vec<_> = analytic.point.iter().chain(&analytic.head).collect();
        prop_assert_eq!(layers.len(), numeric.len());
        for (k, (layer, (nw, nb))) in layers.iter().zip(&numeric).enumerate() {
            for (i, (a, n)) in layer.w.iter().zip(nw).enumerate() {
                prop_assert!(grads_agree(*a, *n), "layer {} w[{}]: analytic {} numeric {}", k, i, a, n);
            }
            for (i, (a, n)) in layer.b.iter().zip(nb).enumerate() {
                prop_assert!(grads_agree(*a, *n), "layer {} b[{}]: analytic {} numeric {}", k, i, a, n);
            }
        }
    }

    #[test]
    fn logits_match_direct_evaluation(seed in any::<u64>()) {
        let model = random_model(seed);
        let (inputs, _, _) = random_inputs(seed);
        let fast = model.forward(&inputs).unwrap().logits;
        let slow = naive_pointnet_logits(&model, &inputs);
        for (a, b) in fast.iter().zip(&slow) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn point_order_is_irrelevant(
        seed in any::<u64>(),
        (cloud, shuffled) in cloud_strategy(20).prop_flat_map(|c| {
            let points = c.points().to_vec();
            (Just(c), Just(points).prop_shuffle())
        }),
    ) {
        let clf = baseline_for(seed);
        let permuted = PointCloud::new(shuffled, cloud.label, "perm").unwrap();
        prop_assert_eq!(clf.logits(&cloud).unwrap(), clf.logits(&permuted).unwrap());
    }

    #[test]
    fn duplicating_a_point_is_irrelevant(seed in any::<u64>(), cloud in cloud_strategy(20), pick in any::<prop::sample::Index>()) {
        prop_assume!(!cloud.is_empty());
        let clf = baseline_for(seed);
        let mut points = cloud.points().to_vec();
        points.push(points[pick.index(points.len())]);
        let doubled = PointCloud::new(points, cloud.label, "dup").unwrap();
        prop_assert_eq!(clf.logits(&cloud).unwrap(), clf.logits(&doubled).unwrap());
    }

    #[test]
    fn missing_values_encode_as_zero(cloud in cloud_strategy(20)) {
        let norm = unit_normalizer(20);
        let encoded = encode_points(&cloud, &norm);
        prop_assert_eq!(encoded.len(), cloud.len());
        for (row, point) in encoded.iter().zip(cloud.points()) {
            for f in 0..NUM_FEATURES {
                match point[f] {
                    None => prop_assert_eq!(row[f], 0.0),
                    Some(v) => prop_assert_eq!(row[f], v.clamp(0.0, 1.0)),
                }
            }
        }
    }
}

#[test]
fn capacity_is_enforced() {
    let config = PointNetConfig {
        capacity: 3,
        ..Default::default()
    };
    let model = PointNetModel::new(config, &mut rng_from_seed(1)).unwrap();
    let err = model.forward(&[[0.5; NUM_FEATURES]; 4]).unwrap_err();
    assert!(matches!(
        err,
        Error::CapacityExceeded {
            points: 4,
            capacity: 3
        }
    ));
    assert!(err.to_string().contains("capacity exceeded"));
    assert!(model.forward(&[[0.5; NUM_FEATURES]; 3]).is_ok());
}

#[test]
fn json_round_trip_keeps_predictions() {
    let model = random_model(3);
    let (inputs, _, _) = random_inputs(3);
    let back = PointNetModel::from_json(model.to_json()).unwrap();
    assert_eq!(
        model.forward(&inputs).unwrap().logits,
        back.forward(&inputs).unwrap().logits
    );
}
