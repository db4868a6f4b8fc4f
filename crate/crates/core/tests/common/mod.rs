//! Independent oracles shared by the integration suites. Nothing here calls
//! the code path it is used to check.

#![allow(dead_code)]

use proptest::prelude::*;
use rand::Rng;
use refhist::baseline::PointNetModel;
use refhist::network::{ClassWeights, MlpModel};
use refhist::pointcloud::{ClassId, FeatureKind, Point, PointCloud, NUM_FEATURES};
use refhist::Normalizer;

/// Tests every present value against every bin interval `[k/K, (k+1)/K)`,
/// with the last interval closed, after clipping into `[lo, hi]`.
pub fn brute_force_histogram(cloud: &PointCloud, norm: &Normalizer, bins: usize) -> Vec<u32> {
    let mut counts = vec![0u32; NUM_FEATURES * bins];
    for f in 0..NUM_FEATURES {
        for p in cloud.points() {
            let Some(v) = p[f] else { continue };
            let (lo, hi) = (norm.lo[f], norm.hi[f]);
            let u = if v <= lo {
                0.0
            } else if v >= hi {
                1.0
            } else {
                (v - lo) / (hi - lo)
            };
            let mut hits = 0;
            for k in 0..bins {
                let left = k as f64 / bins as f64;
                let right = (k + 1) as f64 / bins as f64;
                let inside = if k == bins - 1 {
                    u >= left && u <= 1.0
                } else {
                    u >= left && u < right
                };
                if inside {
                    counts[f * bins + k] += 1;
                    hits += 1;
                }
            }
            assert_eq!(hits, 1, "value {u} fell in {hits} bins");
        }
    }
    counts
}

/// Random cloud whose values straddle the normalizer range (so clipping is
/// exercised) with roughly `missing` of the slots absent.
pub fn random_cloud<R: Rng>(rng: &mut R, max_points: usize, missing: f64) -> PointCloud {
    let n = rng.random_range(0..=max_points);
    let points: Vec<Point> = (0..n)
        .map(|_| {
            let mut p: Point = [None; NUM_FEATURES];
            for slot in p.iter_mut() {
                if rng.random::<f64>() >= missing {
                    *slot = Some(rng.random_range(-1.5..2.5));
                }
            }
            if p.iter().all(Option::is_none) {
                p[rng.random_range(0..NUM_FEATURES)] = Some(rng.random_range(-1.5..2.5));
            }
            p
        })
        .collect();
    let label = ClassId::ALL[rng.random_range(0..5)];
    PointCloud::new(points, label, "rand").unwrap()
}

pub fn unit_normalizer(bins: usize) -> Normalizer {
    Normalizer::from_bounds(
        "manual_clip",
        [0.0; NUM_FEATURES],
        [1.0; NUM_FEATURES],
        bins,
    )
    .unwrap()
}

/// Straight nested-loop evaluation of the three-layer ReLU network.
pub fn naive_logits(model: &MlpModel, x: &[f64]) -> Vec<f64> {
    let mut current = x.to_vec();
    for (k, layer) in model.layers().iter().enumerate() {
        let (din, dout) = (layer.in_dim(), layer.out_dim());
        let mut next = vec![0.0; dout];
        for o in 0..dout {
            let mut acc = layer.b[o];
            for i in 0..din {
                acc += layer.w[o * din + i] * current[i];
            }
            next[o] = if k < 2 { acc.max(0.0) } else { acc };
        }
        current = next;
    }
    current
}

/// `-w * log softmax(z)[y]` evaluated directly from the definition.
pub fn naive_weighted_ce(logits: &[f64], label: ClassId, weight: f64) -> f64 {
    let denom: f64 = logits.iter().map(|z| z.exp()).sum();
    -weight * (logits[label.index()].exp() / denom).ln()
}

pub const FD_STEP: f64 = 1e-6;
pub const FD_REL_TOL: f64 = 1e-4;
pub const FD_ABS_FLOOR: f64 = 1e-8;

pub fn grads_agree(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= FD_ABS_FLOOR || diff / analytic.abs().max(numeric.abs()) <= FD_REL_TOL
}

/// Central differences of the MLP loss with respect to every parameter,
/// returned layer by layer as (w, b).
pub fn mlp_numeric_gradients(
    model: &MlpModel,
    x: &[f64],
    label: ClassId,
    weights: &ClassWeights,
) -> Vec<(Vec<f64>, Vec<f64>)> {
    let loss = |m: &MlpModel| naive_weighted_ce(&naive_logits(m, x), label, weights.get(label));
    let mut probe = model.clone();
    let mut out = Vec::new();
    for k in 0..3 {
        let mut gw = vec![0.0; model.layers()[k].w.len()];
        for (i, g) in gw.iter_mut().enumerate() {
            let orig = probe.layers()[k].w[i];
            probe.layers_mut()[k].w[i] = orig + FD_STEP;
            let up = loss(&probe);
            probe.layers_mut()[k].w[i] = orig - FD_STEP;
            let down = loss(&probe);
            probe.layers_mut()[k].w[i] = orig;
            *g = (up - down) / (2.0 * FD_STEP);
        }
        let mut gb = vec![0.0; model.layers()[k].b.len()];
        for (i, g) in gb.iter_mut().enumerate() {
            let orig = probe.layers()[k].b[i];
            probe.layers_mut()[k].b[i] = orig + FD_STEP;
            let up = loss(&probe);
            probe.layers_mut()[k].b[i] = orig - FD_STEP;
            let down = loss(&probe);
            probe.layers_mut()[k].b[i] = orig;
            *g = (up - down) / (2.0 * FD_STEP);
        }
        out.push((gw, gb));
    }
    out
}

/// Direct evaluation of the max-pooling network: per-point ReLU stack,
/// channel-wise max (zero for an empty cloud), ReLU head with linear output.
pub fn naive_pointnet_logits(model: &PointNetModel, inputs: &[[f64; NUM_FEATURES]]) -> Vec<f64> {
    let cfg = model.config().clone();
    let json = model.to_json();
    let layers: Vec<(Vec<f64>, Vec<f64>)> = json["layers"]
        .as_array()
        .unwrap()
        .iter()
        .map(|l| {
            let v = |k: &str| {
                l[k].as_array()
                    .unwrap()
                    .iter()
                    .map(|x| x.as_f64().unwrap())
                    .collect::<Vec<_>>()
            };
            (v("w"), v("b"))
        })
        .collect();
    let apply = |(w, b): &(Vec<f64>, Vec<f64>), x: &[f64], relu: bool| -> Vec<f64> {
        let dout = b.len();
        let din = x.len();
        (0..dout)
            .map(|o| {
                let acc = b[o] + (0..din).map(|i| w[o * din + i] * x[i]).sum::<f64>();
                if relu {
                    acc.max(0.0)
                } else {
                    acc
                }
            })
            .collect()
    };
    let n_point = cfg.point_layers.len();
    let width = *cfg.point_layers.last().unwrap();
    let mut pooled = vec![f64::NEG_INFINITY; width];
    for x in inputs {
        let mut h = x.to_vec();
        for layer in &layers[..n_point] {
            h = apply(layer, &h, true);
        }
        for (p, v) in pooled.iter_mut().zip(h) {
            *p = p.max(v);
        }
    }
    if inputs.is_empty() {
        pooled = vec![0.0; width];
    }
    let mut h = pooled;
    let n_head = layers.len() - n_point;
    for (k, layer) in layers[n_point..].iter().enumerate() {
        h = apply(layer, &h, k + 1 < n_head);
    }
    h
}

/// Central differences of the point-set model's loss, in the model's layer
/// order (shared layers first, then head), as (w, b) per layer.
pub fn pointnet_numeric_gradients(
    model: &PointNetModel,
    inputs: &[[f64; NUM_FEATURES]],
    label: ClassId,
    weight: f64,
) -> Vec<(Vec<f64>, Vec<f64>)> {
    let loss =
        |m: &PointNetModel| naive_weighted_ce(&naive_pointnet_logits(m, inputs), label, weight);
    let mut probe = model.clone();
    let n_layers = probe.layers_mut().count();
    let mut out = Vec::new();
    for k in 0..n_layers {
        let sizes = {
            let layer = probe.layers_mut().nth(k).unwrap();
            (layer.w.len(), layer.b.len())
        };
        let mut grads = (vec![0.0; sizes.0], vec![0.0; sizes.1]);
        for bias in [false, true] {
            let n = if bias { sizes.1 } else { sizes.0 };
            for i in 0..n {
                let set = |m: &mut PointNetModel, v: f64| {
                    let layer = m.layers_mut().nth(k).unwrap();
                    if bias {
                        layer.b[i] = v
                    } else {
                        layer.w[i] = v
                    }
                };
                let orig = {
                    let layer = probe.layers_mut().nth(k).unwrap();
                    if bias {
                        layer.b[i]
                    } else {
                        layer.w[i]
                    }
                };
                set(&mut probe, orig + FD_STEP);
                let up = loss(&probe);
                set(&mut probe, orig - FD_STEP);
                let down = loss(&probe);
                set(&mut probe, orig);
                let g = (up - down) / (2.0 * FD_STEP);
                if bias {
                    grads.1[i] = g
                } else {
                    grads.0[i] = g
                }
            }
        }
        out.push(grads);
    }
    out
}

/// Present values mostly inside the unit range, some beyond it on either
/// side, some exactly on a twentieth.
pub fn value_strategy() -> impl Strategy<Value = Option<f64>> {
    prop_oneof![
        1 => Just(None),
        4 => (-0.5f64..1.5).prop_map(Some),
        1 => (0u32..=20).prop_map(|k| Some(k as f64 / 20.0)),
    ]
}

pub fn point_strategy() -> impl Strategy<Value = Point> {
    prop::array::uniform6(value_strategy())
        .prop_filter("a point needs a value", |p| p.iter().any(Option::is_some))
}

pub fn cloud_strategy(max_points: usize) -> impl Strategy<Value = PointCloud> {
    (
        prop::collection::vec(point_strategy(), 0..=max_points),
        0..5usize,
    )
        .prop_map(|(points, c)| PointCloud::new(points, ClassId::ALL[c], "prop").unwrap())
}

pub fn feature_of(index: usize) -> FeatureKind {
    FeatureKind::from_index(index).unwrap()
}
