//! Three-layer fully-connected classifier trained with class-weighted
//! softmax cross-entropy and Adam.

mod adam;
mod dense;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use adam::{AdamConfig, AdamMoments};
pub use dense::{Activation, Dense};

use crate::error::{Error, Result};
use crate::pointcloud::{ClassId, NUM_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden: [usize; 2],
    pub output_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            input_dim: 120,
            hidden: [16, 16],
            output_dim: NUM_CLASSES,
            activation: Activation::Relu,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "all layer widths must be at least 1: {self:?}"
            )));
        }
        Ok(())
    }

    fn dims(&self) -> [(usize, usize); 3] {
        [
            (self.input_dim, self.hidden[0]),
            (self.hidden[0], self.hidden[1]),
            (self.hidden[1], self.output_dim),
        ]
    }
}

/// Weights plus biases of every layer.
pub fn count_parameters(cfg: &MlpConfig) -> usize {
    cfg.dims().iter().map(|(i, o)| o * i + o).sum()
}

/// Per-class loss weights `N_samples / (N_classes * N_i)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassWeights {
    pub w: [f64; NUM_CLASSES],
}

impl ClassWeights {
    pub fn uniform() -> Self {
        ClassWeights {
            w: [1.0; NUM_CLASSES],
        }
    }

    pub fn get(&self, class: ClassId) -> f64 {
        self.w[class.index()]
    }
}

/// Class weights over all five classes; every class must have samples.
pub fn class_weights(counts: &BTreeMap<ClassId, usize>) -> Result<ClassWeights> {
    class_weights_for(counts, &ClassId::ALL)
}

/// Class weights when only `classes` take part in the task.
///
/// `N_classes` is `classes.len()` and `N_samples` counts only those classes.
/// Classes outside the set never occur as labels and keep weight 1.
pub fn class_weights_for(
    counts: &BTreeMap<ClassId, usize>,
    classes: &[ClassId],
) -> Result<ClassWeights> {
    if classes.is_empty() {
        return Err(Error::InvalidConfig("no classes to weight".into()));
    }
    let count = |c: &ClassId| counts.get(c).copied().unwrap_or(0);
    if let Some(c) = classes.iter().find(|c| count(c) == 0) {
        return Err(Error::EmptyClass(*c));
    }
    let total: usize = classes.iter().map(count).sum();
    let mut w = [1.0; NUM_CLASSES];
    for c in classes {
        w[c.index()] = total as f64 / (classes.len() as f64 * count(c) as f64);
    }
    Ok(ClassWeights { w })
}

/// Softmax with max subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Class decision and probabilities for a logit vector.
pub fn predict_from_logits(logits: &[f64]) -> (ClassId, Vec<f64>) {
    let class = ClassId::from_index(argmax(logits)).expect("logit vector has one entry per class");
    (class, softmax(logits))
}

/// Weighted cross-entropy and its gradient with respect to the logits.
pub fn weighted_cross_entropy(logits: &[f64], label: ClassId, weight: f64) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    let y = label.index();
    let loss = -weight * (logits[y] - max - log_sum);
    let grad = logits
        .iter()
        .enumerate()
        .map(|(i, z)| {
            let p = (z - max - log_sum).exp();
            weight * (p - if i == y { 1.0 } else { 0.0 })
        })
        .collect();
    (loss, grad)
}

/// Activations retained by [`MlpModel::forward`] for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    pub input: Vec<f64>,
    /// Pre-activations of the two hidden layers.
    pub pre: [Vec<f64>; 2],
    /// Post-activations of the two hidden layers.
    pub hidden: [Vec<f64>; 2],
    pub logits: Vec<f64>,
}

/// Gradients shaped like the model's three layers.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradients {
    pub layers: [Dense; 3],
}

impl MlpGradients {
    pub fn add_assign(&mut self, other: &MlpGradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.params_mut().zip(b.params()).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.layers.iter_mut().for_each(|l| l.scale(s));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    config: MlpConfig,
    layers: [Dense; 3],
    moments: [AdamMoments; 3],
    step: u64,
}

impl MlpModel {
    /// Glorot-initialized model.
    pub fn new<R: Rng + ?Sized>(config: MlpConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let [d0, d1, d2] = config.dims();
        let layers = [
            Dense::glorot(d0.0, d0.1, rng),
            Dense::glorot(d1.0, d1.1, rng),
            Dense::glorot(d2.0, d2.1, rng),
        ];
        Ok(Self::from_layers(config, layers))
    }

    pub fn zeros(config: MlpConfig) -> Result<Self> {
        config.validate()?;
        let layers = config.dims().map(|(i, o)| Dense::zeros(i, o));
        Ok(Self::from_layers(config, layers))
    }

    fn from_layers(config: MlpConfig, layers: [Dense; 3]) -> Self {
        let moments = [
            AdamMoments::zeros(layers[0].parameter_count()),
            AdamMoments::zeros(layers[1].parameter_count()),
            AdamMoments::zeros(layers[2].parameter_count()),
        ];
        MlpModel {
            config,
            layers,
            moments,
            step: 0,
        }
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Dense; 3] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense; 3] {
        &mut self.layers
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Dense::parameter_count).sum()
    }

    pub fn zero_gradients(&self) -> MlpGradients {
        MlpGradients {
            layers: [
                self.layers[0].zero_like(),
                self.layers[1].zero_like(),
                self.layers[2].zero_like(),
            ],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardCache> {
        if x.len() != self.config.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.input_dim,
                got: x.len(),
            });
        }
        let act = self.config.activation;
        let mut cache = ForwardCache {
            input: x.to_vec(),
            ..Default::default()
        };
        self.layers[0].forward(x, &mut cache.pre[0]);
        cache.hidden[0] = cache.pre[0].iter().map(|z| act.apply(*z)).collect();
        self.layers[1].forward(&cache.hidden[0], &mut cache.pre[1]);
        cache.hidden[1] = cache.pre[1].iter().map(|z| act.apply(*z)).collect();
        self.layers[2].forward(&cache.hidden[1], &mut cache.logits);
        Ok(cache)
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.logits)
    }

    pub fn predict(&self, x: &[f64]) -> Result<(ClassId, Vec<f64>)> {
        Ok(predict_from_logits(&self.logits(x)?))
    }

    /// Accumulates the gradient of the weighted loss at `cache` into `grads`.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &[f64], grads: &mut MlpGradients) {
        let act = self.config.activation;
        let mut d1 = vec![0.0; self.config.hidden[1]];
        self.layers[2].backward(
            &cache.hidden[1],
            dlogits,
            &mut grads.layers[2],
            Some(&mut d1),
        );
        d1.iter_mut()
            .zip(&cache.pre[1])
            .for_each(|(d, z)| *d *= act.derivative(*z));

        let mut d0 = vec![0.0; self.config.hidden[0]];
        self.layers[1].backward(&cache.hidden[0], &d1, &mut grads.layers[1], Some(&mut d0));
        d0.iter_mut()
            .zip(&cache.pre[0])
            .for_each(|(d, z)| *d *= act.derivative(*z));

        self.layers[0].backward(&cache.input, &d0, &mut grads.layers[0], None);
    }

    /// Weighted cross-entropy for one sample and its gradient.
    pub fn loss_and_grad(
        &self,
        x: &[f64],
        label: ClassId,
        weights: &ClassWeights,
    ) -> Result<(f64, MlpGradients)> {
        let mut grads = self.zero_gradients();
        let loss = self.accumulate_loss_and_grad(x, label, weights, &mut grads)?;
        Ok((loss, grads))
    }

    pub fn accumulate_loss_and_grad(
        &self,
        x: &[f64],
        label: ClassId,
        weights: &ClassWeights,
        grads: &mut MlpGradients,
    ) -> Result<f64> {
        let cache = self.forward(x)?;
        let (loss, dlogits) = weighted_cross_entropy(&cache.logits, label, weights.get(label));
        self.backward(&cache, &dlogits, grads);
        Ok(loss)
    }

    /// One Adam update; the step counter is incremented before bias correction.
    pub fn adam_step(&mut self, grads: &MlpGradients, cfg: &AdamConfig) {
        self.step += 1;
        for ((layer, moments), grad) in self
            .layers
            .iter_mut()
            .zip(self.moments.iter_mut())
            .zip(&grads.layers)
        {
            moments.update(layer.params_mut(), grad.params(), self.step, cfg);
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(MlpFile {
            config: self.config,
            layers: self.layers.to_vec(),
        })
        .expect("model serializes")
    }

    /// Loads weights; Adam state starts fresh.
    pub fn from_json(value: serde_json::Value) -> Result<Self> {
        let file: MlpFile = serde_json::from_value(value)?;
        file.config.validate()?;
        if file.layers.len() != 3 {
            return Err(Error::InvalidConfig(format!(
                "expected 3 layers, found {}",
                file.layers.len()
            )));
        }
        let dims = file.config.dims();
        let mut layers = Vec::with_capacity(3);
        for (i, (layer, (din, dout))) in file.layers.into_iter().zip(dims).enumerate() {
            layers.push(layer.with_dims(din, dout).ok_or_else(|| {
                Error::InvalidConfig(format!("layer {i} does not match {din}x{dout}"))
            })?);
        }
        let layers: [Dense; 3] = layers.try_into().expect("three layers");
        Ok(Self::from_layers(file.config, layers))
    }
}

#[derive(Serialize, Deserialize)]
struct MlpFile {
    config: MlpConfig,
    layers: Vec<Dense>,
}
