mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use refhist::network::{
    argmax, predict_from_logits, softmax, weighted_cross_entropy, AdamConfig, ClassWeights,
    MlpConfig, MlpModel,
};
use refhist::pointcloud::ClassId;
use refhist::seed::rng_from_seed;

/// A Glorot-initialized model with non-zero biases, so that no hidden unit
/// sits exactly on the ReLU kink, plus a continuous input.
fn random_instance(seed: u64, full_size: bool) -> (MlpModel, Vec<f64>, ClassId, ClassWeights) {
    let mut rng = rng_from_seed(seed);
    let config = if full_size {
        MlpConfig::default()
    } else {
        MlpConfig {
            input_dim: rng.random_range(1..=24),
            hidden: [rng.random_range(1..=12), rng.random_range(1..=12)],
            ..Default::default()
        }
    };
    let mut model = MlpModel::new(config.clone(), &mut rng).unwrap();
    for layer in model.layers_mut() {
        layer
            .b
            .iter_mut()
            .for_each(|b| *b = rng.random_range(-0.5..0.5));
    }
    let x: Vec<f64> = (0..config.input_dim)
        .map(|_| rng.random_range(0.0..4.0))
        .collect();
    let label = ClassId::ALL[rng.random_range(0..5)];
    let mut weights = ClassWeights::uniform();
    weights
        .w
        .iter_mut()
        .for_each(|w| *w = rng.random_range(0.2..3.0));
    (model, x, label, weights)
}

fn check_gradients(seed: u64, full_size: bool) -> Result<(), TestCaseError> {
    let (model, x, label, weights) = random_instance(seed, full_size);
    let (_, analytic) = model.loss_and_grad(&x, label, &weights).unwrap();
    let numeric = mlp_numeric_gradients(&model, &x, label, &weights);
    for (k, (nw, nb)) in numeric.iter().enumerate() {
        let layer = &analytic.layers[k];
        for (i, (a, n)) in layer.w.iter().zip(nw).enumerate() {
            prop_assert!(
                grads_agree(*a, *n),
                "layer {} w[{}]: analytic {} numeric {}",
                k,
                i,
                a,
                n
            );
        }
        for (i, (a, n)) in layer.b.iter().zip(nb).enumerate() {
            prop_assert!(
                grads_agree(*a, *n),
                "layer {} b[{}]: analytic {} numeric {}",
                k,
                i,
                a,
                n
            );
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(150))]

    #[test]
    fn gradients_match_finite_differences(seed in any::<u64>()) {
        check_gradients(seed, false)?;
    }

    #[test]
    fn logits_match_naive_matmul(seed in any::<u64>(), full_size in any::<bool>()) {
        let (model, x, _, _) = random_instance(seed, full_size);
        let fast = model.logits(&x).unwrap();
        let slow = naive_logits(&model, &x);
        for (a, b) in fast.iter().zip(&slow) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{} vs {}", a, b);
        }
    }

    #[test]
    fn loss_matches_definition(seed in any::<u64>()) {
        let (model, x, label, weights) = random_instance(seed, false);
        let (loss, _) = model.loss_and_grad(&x, label, &weights).unwrap();
        let direct = naive_weighted_ce(&naive_logits(&model, &x), label, weights.get(label));
        prop_assert!((loss - direct).abs() <= 1e-10 * direct.abs().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn gradients_match_finite_differences_at_full_size(seed in any::<u64>()) {
        check_gradients(seed, true)?;
    }
}

fn logits_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-30.0f64..30.0, 5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn softmax_ignores_constant_shift(logits in logits_strategy(), c in -100.0f64..100.0) {
        let shifted: Vec<f64> = logits.iter().map(|z| z + c).collect();
        for (p, q) in softmax(&logits).iter().zip(softmax(&shifted)) {
            prop_assert!((p - q).abs() <= 1e-12);
        }
    }

    #[test]
    fn softmax_is_a_distribution(logits in logits_strategy()) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(p.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn loss_is_non_negative(logits in logits_strategy(), label in 0usize..5, w in 0.0f64..10.0) {
        let (loss, grad) = weighted_cross_entropy(&logits, ClassId::ALL[label], w);
        prop_assert!(loss >= 0.0);
        // The gradient of a softmax loss sums to zero across classes.
        prop_assert!(grad.iter().sum::<f64>().abs() <= 1e-12 * w.max(1.0));
    }

    #[test]
    fn loss_vanishes_only_with_certainty(label in 0usize..5, margin in 0.0f64..40.0) {
        let mut logits = vec![0.0; 5];
        logits[label] = margin;
        let (loss, _) = weighted_cross_entropy(&logits, ClassId::ALL[label], 1.0);
        let p = softmax(&logits)[label];
        prop_assert!((loss - (-p.ln())).abs() <= 1e-12);
        prop_assert!(loss > 0.0 || p == 1.0);
    }

    #[test]
    fn decision_survives_positive_rescaling(logits in logits_strategy(), s in 1e-3f64..1e3) {
        let (class, probs) = predict_from_logits(&logits);
        let scaled: Vec<f64> = probs.iter().map(|p| p * s).collect();
        prop_assert_eq!(argmax(&scaled), class.index());
    }
}

#[test]
fn zero_model_is_uniform() {
    let model = MlpModel::zeros(MlpConfig::default()).unwrap();
    let (class, probs) = model.predict(&[1.0; 120]).unwrap();
    assert_eq!(class, ClassId::Car);
    assert!(probs.iter().all(|p| (p - 0.2).abs() < 1e-15));
}

#[test]
fn adam_runs_are_bit_identical() {
    let run = || {
        let (mut model, x, label, weights) = random_instance(99, true);
        for _ in 0..25 {
            let (_, grads) = model.loss_and_grad(&x, label, &weights).unwrap();
            model.adam_step(&grads, &AdamConfig::with_lr(1e-3));
        }
        model
    };
    assert_eq!(run(), run());
}

#[test]
fn training_on_one_sample_reduces_its_loss() {
    let (mut model, x, label, weights) = random_instance(5, true);
    let (start, _) = model.loss_and_grad(&x, label, &weights).unwrap();
    for _ in 0..200 {
        let (_, grads) = model.loss_and_grad(&x, label, &weights).unwrap();
        model.adam_step(&grads, &AdamConfig::with_lr(1e-3));
    }
    let (end, _) = model.loss_and_grad(&x, label, &weights).unwrap();
    assert!(end < start * 0.1, "loss {start} -> {end}");
}
