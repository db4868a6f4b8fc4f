//! Max-pooling point-set comparator.
//!
//! Each reflection's six normalized values go through the same stack of
//! fully-connected layers; an element-wise max over reflections gives the
//! cloud embedding, and a small head produces the logits. This is a minimal
//! model of the per-point design, not a replica of any published network.
//!
//! A point-wise model has no notion of a missing value, so missing slots are
//! fed as 0 after normalization, i.e. the lower boundary of the feature range.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurizer::{fit_normalizer, normalize, Normalizer};
use crate::network::{weighted_cross_entropy, Activation, AdamConfig, AdamMoments, Dense};
use crate::pipeline::{train_model, CloudClassifier, TrainConfig, Trainable, TrainingCurve};
use crate::pointcloud::{
    ClassId, Dataset, FeatureKind, PointCloud, Split, NUM_CLASSES, NUM_FEATURES,
};
use crate::seed::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointNetConfig {
    /// Widths of the shared per-point layers.
    pub point_layers: Vec<usize>,
    /// Widths of the hidden layers between pooling and the output.
    pub head_layers: Vec<usize>,
    pub output_dim: usize,
    /// Largest supported number of points per cloud.
    pub capacity: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl Default for PointNetConfig {
    fn default() -> Self {
        PointNetConfig {
            point_layers: vec![16, 16],
            head_layers: vec![16],
            output_dim: NUM_CLASSES,
            capacity: 256,
            activation: Activation::Relu,
        }
    }
}

impl PointNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.point_layers.is_empty() {
            return Err(Error::InvalidConfig(
                "at least one per-point layer is required".into(),
            ));
        }
        if self
            .point_layers
            .iter()
            .chain(&self.head_layers)
            .any(|w| *w == 0)
            || self.output_dim == 0
        {
            return Err(Error::InvalidConfig(
                "layer widths must be at least 1".into(),
            ));
        }
        if self.capacity == 0 {
            return Err(Error::InvalidConfig("capacity must be at least 1".into()));
        }
        Ok(())
    }

    fn point_dims(&self) -> Vec<(usize, usize)> {
        let mut prev = NUM_FEATURES;
        self.point_layers
            .iter()
            .map(|w| {
                let d = (prev, *w);
                prev = *w;
                d
            })
            .collect()
    }

    fn head_dims(&self) -> Vec<(usize, usize)> {
        let mut prev = *self.point_layers.last().expect("validated non-empty");
        self.head_layers
            .iter()
            .chain(std::iter::once(&self.output_dim))
            .map(|w| {
                let d = (prev, *w);
                prev = *w;
                d
            })
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.point_dims()
            .into_iter()
            .chain(self.head_dims())
            .map(|(i, o)| i * o + o)
            .sum()
    }
}

/// Normalized reflections with missing values replaced by 0.
pub fn encode_points(cloud: &PointCloud, norm: &Normalizer) -> Vec<[f64; NUM_FEATURES]> {
    cloud
        .points()
        .iter()
        .map(|p| {
            let mut row = [0.0; NUM_FEATURES];
            for f in FeatureKind::ALL {
                if let Some(v) = p[f.index()] {
                    row[f.index()] = normalize(v, f, norm);
                }
            }
            row
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointNetGradients {
    pub point: Vec<Dense>,
    pub head: Vec<Dense>,
}

impl PointNetGradients {
    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.point.iter_mut().chain(self.head.iter_mut())
    }
}

#[derive(Debug, Clone)]
struct PointTrace {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct PointNetCache {
    inputs: Vec<[f64; NUM_FEATURES]>,
    points: Vec<PointTrace>,
    /// Winning point per embedding channel; `None` for an empty cloud.
    argmax: Vec<Option<usize>>,
    embedding: Vec<f64>,
    head_pre: Vec<Vec<f64>>,
    head_post: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointNetModel {
    config: PointNetConfig,
    point: Vec<Dense>,
    head: Vec<Dense>,
    moments: Vec<AdamMoments>,
    step: u64,
}

impl PointNetModel {
    pub fn new<R: Rng + ?Sized>(config: PointNetConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let point = config
            .point_dims()
            .into_iter()
            .map(|(i, o)| Dense::glorot(i, o, rng))
            .collect();
        let head = config
            .head_dims()
            .into_iter()
            .map(|(i, o)| Dense::glorot(i, o, rng))
            .collect();
        Ok(Self::from_layers(config, point, head))
    }

    fn from_layers(config: PointNetConfig, point: Vec<Dense>, head: Vec<Dense>) -> Self {
        let moments = point
            .iter()
            .chain(&head)
            .map(|l| AdamMoments::zeros(l.parameter_count()))
            .collect();
        PointNetModel {
            config,
            point,
            head,
            moments,
            step: 0,
        }
    }

    pub fn config(&self) -> &PointNetConfig {
        &self.config
    }

    pub fn parameter_count(&self) -> usize {
        self.point
            .iter()
            .chain(&self.head)
            .map(Dense::parameter_count)
            .sum()
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.point.iter_mut().chain(self.head.iter_mut())
    }

    pub fn zero_gradients(&self) -> PointNetGradients {
        PointNetGradients {
            point: self.point.iter().map(Dense::zero_like).collect(),
            head: self.head.iter().map(Dense::zero_like).collect(),
        }
    }

    pub fn forward(&self, inputs: &[[f64; NUM_FEATURES]]) -> Result<PointNetCache> {
        if inputs.len() > self.config.capacity {
            return Err(Error::CapacityExceeded {
                points: inputs.len(),
                capacity: self.config.capacity,
            });
        }
        let act = self.config.activation;
        let points: Vec<PointTrace> = inputs
            .iter()
            .map(|x| {
                let mut trace = PointTrace {
                    pre: Vec::new(),
                    post: Vec::new(),
                };
                let mut current = x.to_vec();
                for layer in &self.point {
                    let mut z = Vec::new();
                    layer.forward(&current, &mut z);
                    current = z.iter().map(|v| act.apply(*v)).collect();
                    trace.pre.push(z);
                    trace.post.push(current.clone());
                }
                trace
            })
            .collect();

        let width = *self
            .config
            .point_layers
            .last()
            .expect("validated non-empty");
        let mut embedding = vec![0.0; width];
        let mut argmax = vec![None; width];
        for (c, (e, a)) in embedding.iter_mut().zip(argmax.iter_mut()).enumerate() {
            for (i, trace) in points.iter().enumerate() {
                let v = trace.post.last().expect("at least one layer")[c];
                if a.is_none() || v > *e {
                    *e = v;
                    *a = Some(i);
                }
            }
        }

        let mut head_pre = Vec::with_capacity(self.head.len());
        let mut head_post = Vec::with_capacity(self.head.len());
        let mut current = embedding.clone();
        let last = self.head.len() - 1;
        for (k, layer) in self.head.iter().enumerate() {
            let mut z = Vec::new();
            layer.forward(&current, &mut z);
            current = if k == last {
                z.clone()
            } else {
                z.iter().map(|v| act.apply(*v)).collect()
            };
            head_pre.push(z);
            head_post.push(current.clone());
        }
        let logits = current;
        Ok(PointNetCache {
            inputs: inputs.to_vec(),
            points,
            argmax,
            embedding,
            head_pre,
            head_post,
            logits,
        })
    }

    pub fn backward(&self, cache: &PointNetCache, dlogits: &[f64], grads: &mut PointNetGradients) {
        let act = self.config.activation;
        let mut upstream = dlogits.to_vec();
        for k in (0..self.head.len()).rev() {
            if k != self.head.len() - 1 {
                upstream
                    .iter_mut()
                    .zip(&cache.head_pre[k])
                    .for_each(|(d, z)| *d *= act.derivative(*z));
            }
            let input = if k == 0 {
                &cache.embedding
            } else {
                &cache.head_post[k - 1]
            };
            let mut dx = vec![0.0; input.len()];
            self.head[k].backward(input, &upstream, &mut grads.head[k], Some(&mut dx));
            upstream = dx;
        }

        // Route each channel's gradient to the point that won the max.
        let width = upstream.len();
        let mut per_point: Vec<Option<Vec<f64>>> = vec![None; cache.points.len()];
        for (c, winner) in cache.argmax.iter().enumerate() {
            if let Some(i) = winner {
                per_point[*i].get_or_insert_with(|| vec![0.0; width])[c] += upstream[c];
            }
        }

        for (i, d) in per_point.into_iter().enumerate() {
            let Some(mut d) = d else { continue };
            let trace = &cache.points[i];
            for k in (0..self.point.len()).rev() {
                d.iter_mut()
                    .zip(&trace.pre[k])
                    .for_each(|(g, z)| *g *= act.derivative(*z));
                let input: &[f64] = if k == 0 {
                    &cache.inputs[i]
                } else {
                    &trace.post[k - 1]
                };
                if k == 0 {
                    self.point[k].backward(input, &d, &mut grads.point[k], None);
                } else {
                    let mut dx = vec![0.0; input.len()];
                    self.point[k].backward(input, &d, &mut grads.point[k], Some(&mut dx));
                    d = dx;
                }
            }
        }
    }

    pub fn loss_and_grad(
        &self,
        inputs: &[[f64; NUM_FEATURES]],
        label: ClassId,
        weight: f64,
    ) -> Result<(f64, PointNetGradients)> {
        let cache = self.forward(inputs)?;
        let (loss, dlogits) = weighted_cross_entropy(&cache.logits, label, weight);
        let mut grads = self.zero_gradients();
        self.backward(&cache, &dlogits, &mut grads);
        Ok((loss, grads))
    }

    pub fn adam_step(&mut self, grads: &PointNetGradients, cfg: &AdamConfig) {
        self.step += 1;
        let step = self.step;
        let layers = self.point.iter_mut().chain(self.head.iter_mut());
        let grad_layers = grads.point.iter().chain(&grads.head);
        for ((layer, moments), grad) in layers.zip(self.moments.iter_mut()).zip(grad_layers) {
            moments.update(layer.params_mut(), grad.params(), step, cfg);
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let layers: Vec<&Dense> = self.point.iter().chain(&self.head).collect();
        serde_json::json!({
            "kind": "pointnet",
            "config": self.config,
            "layers": layers,
        })
    }

    pub fn from_json(value: serde_json::Value) -> Result<Self> {
        #[derive(Deserialize)]
        struct File {
            kind: String,
            config: PointNetConfig,
            layers: Vec<Dense>,
        }
        let file: File = serde_json::from_value(value)?;
        if file.kind != "pointnet" {
            return Err(Error::InvalidConfig(format!(
                "expected a pointnet model, found kind '{}'",
                file.kind
            )));
        }
        file.config.validate()?;
        let dims: Vec<(usize, usize)> = file
            .config
            .point_dims()
            .into_iter()
            .chain(file.config.head_dims())
            .collect();
        if dims.len() != file.layers.len() {
            return Err(Error::InvalidConfig(format!(
                "expected {} layers, found {}",
                dims.len(),
                file.layers.len()
            )));
        }
        let mut layers = file
            .layers
            .into_iter()
            .zip(&dims)
            .enumerate()
            .map(|(k, (l, (i, o)))| {
                l.with_dims(*i, *o).ok_or_else(|| {
                    Error::InvalidConfig(format!("layer {k} does not match {i}x{o}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let head = layers.split_off(file.config.point_layers.len());
        Ok(Self::from_layers(file.config, layers, head))
    }
}

/// The comparator together with the normalizer its inputs go through.
#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    pub model: PointNetModel,
    pub normalizer: Normalizer,
}

impl Baseline {
    pub fn forward(&self, cloud: &PointCloud) -> Result<Vec<f64>> {
        Ok(self
            .model
            .forward(&encode_points(cloud, &self.normalizer))?
            .logits)
    }
}

impl CloudClassifier for Baseline {
    fn logits(&self, cloud: &PointCloud) -> Result<Vec<f64>> {
        self.forward(cloud)
    }

    fn parameter_count(&self) -> usize {
        self.model.parameter_count()
    }
}

impl Trainable for Baseline {
    type Input = Vec<[f64; NUM_FEATURES]>;
    type Grads = PointNetGradients;

    fn prepare(&self, cloud: &PointCloud) -> Result<Self::Input> {
        if cloud.len() > self.model.config.capacity {
            return Err(Error::CapacityExceeded {
                points: cloud.len(),
                capacity: self.model.config.capacity,
            });
        }
        Ok(encode_points(cloud, &self.normalizer))
    }

    fn prepared_logits(&self, input: &Self::Input) -> Vec<f64> {
        self.model
            .forward(input)
            .expect("capacity checked in prepare")
            .logits
    }

    fn zero_grads(&self) -> PointNetGradients {
        self.model.zero_gradients()
    }

    fn accumulate(
        &self,
        input: &Self::Input,
        label: ClassId,
        weight: f64,
        grads: &mut PointNetGradients,
    ) -> f64 {
        let cache = self
            .model
            .forward(input)
            .expect("capacity checked in prepare");
        let (loss, dlogits) = weighted_cross_entropy(&cache.logits, label, weight);
        self.model.backward(&cache, &dlogits, grads);
        loss
    }

    fn apply(&mut self, grads: &mut PointNetGradients, batch_len: usize, adam: &AdamConfig) {
        let s = 1.0 / batch_len as f64;
        grads.layers_mut().for_each(|l| l.scale(s));
        self.model.adam_step(grads, adam);
    }
}

/// Trains the comparator with the same recipe, normalizer strategy and class
/// weights as [`crate::pipeline::train`].
pub fn baseline_train(
    dataset: &Dataset,
    cfg: &TrainConfig,
    net: &PointNetConfig,
) -> Result<(Baseline, TrainingCurve)> {
    cfg.validate()?;
    let train_set = dataset.split_samples(Split::Train);
    if train_set.is_empty() {
        return Err(Error::InvalidConfig("train split is empty".into()));
    }
    let normalizer = fit_normalizer(train_set.iter().copied(), &cfg.norm)?.with_bins(cfg.bins)?;
    let model = PointNetModel::new(
        net.clone(),
        &mut rng_from_seed(derive_seed(cfg.seed, "init")),
    )?;
    train_model(Baseline { model, normalizer }, dataset, cfg)
}
