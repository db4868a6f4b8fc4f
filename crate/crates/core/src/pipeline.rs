//! Training loop, evaluation metrics and report files.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurizer::{fit_normalizer, InputMode, NormStrategy, Normalizer, DEFAULT_BINS};
use crate::network::{
    class_weights_for, predict_from_logits, weighted_cross_entropy, AdamConfig, ClassWeights,
    MlpConfig, MlpGradients, MlpModel,
};
use crate::pointcloud::{class_counts, ClassId, Dataset, PointCloud, Split, NUM_CLASSES};
use crate::seed::{derive_seed, rng_from_seed};

/// Anything that maps a point cloud to five class logits.
pub trait CloudClassifier: Sync {
    fn logits(&self, cloud: &PointCloud) -> Result<Vec<f64>>;

    fn parameter_count(&self) -> usize;

    fn predict(&self, cloud: &PointCloud) -> Result<(ClassId, Vec<f64>)> {
        Ok(predict_from_logits(&self.logits(cloud)?))
    }
}

/// A model that can be trained by [`train_model`].
///
/// Inputs are prepared once per sample (e.g. histograms) and reused across
/// epochs, since the training data never changes.
pub trait Trainable: Sized {
    type Input: Send + Sync;
    type Grads;

    fn prepare(&self, cloud: &PointCloud) -> Result<Self::Input>;
    fn prepared_logits(&self, input: &Self::Input) -> Vec<f64>;
    fn zero_grads(&self) -> Self::Grads;
    /// Adds the gradient of `weight * CE(logits, label)` into `grads`; returns the loss.
    fn accumulate(
        &self,
        input: &Self::Input,
        label: ClassId,
        weight: f64,
        grads: &mut Self::Grads,
    ) -> f64;
    /// Averages `grads` over `batch_len` samples and takes one optimizer step.
    fn apply(&mut self, grads: &mut Self::Grads, batch_len: usize, adam: &AdamConfig);
}

/// Histogram featurizer plus MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct RefHist {
    pub model: MlpModel,
    pub normalizer: Normalizer,
}

impl CloudClassifier for RefHist {
    fn logits(&self, cloud: &PointCloud) -> Result<Vec<f64>> {
        self.model.logits(&self.normalizer.input_vector(cloud))
    }

    fn parameter_count(&self) -> usize {
        self.model.parameter_count()
    }
}

impl Trainable for RefHist {
    type Input = Vec<f64>;
    type Grads = MlpGradients;

    fn prepare(&self, cloud: &PointCloud) -> Result<Vec<f64>> {
        Ok(self.normalizer.input_vector(cloud))
    }

    fn prepared_logits(&self, input: &Vec<f64>) -> Vec<f64> {
        self.model
            .logits(input)
            .expect("prepared input has the model's width")
    }

    fn zero_grads(&self) -> MlpGradients {
        self.model.zero_gradients()
    }

    fn accumulate(
        &self,
        input: &Vec<f64>,
        label: ClassId,
        weight: f64,
        grads: &mut MlpGradients,
    ) -> f64 {
        let cache = self
            .model
            .forward(input)
            .expect("prepared input has the model's width");
        let (loss, dlogits) = weighted_cross_entropy(&cache.logits, label, weight);
        self.model.backward(&cache, &dlogits, grads);
        loss
    }

    fn apply(&mut self, grads: &mut MlpGradients, batch_len: usize, adam: &AdamConfig) {
        grads.scale(1.0 / batch_len as f64);
        self.model.adam_step(grads, adam);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub norm: NormStrategy,
    pub bins: usize,
    pub input_mode: InputMode,
    pub hidden: [usize; 2],
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1000,
            batch_size: 64,
            lr: 1e-5,
            seed: 0,
            norm: NormStrategy::StatClip,
            bins: DEFAULT_BINS,
            input_mode: InputMode::Raw,
            hidden: [16, 16],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(
                "learning rate must be positive".into(),
            ));
        }
        if self.bins < 1 {
            return Err(Error::InvalidConfig("bin count must be at least 1".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig::with_lr(self.lr)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_balanced_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingCurve {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_balanced_accuracy\n");
        for r in &self.epochs {
            let val = r
                .val_balanced_accuracy
                .map(|v| v.to_string())
                .unwrap_or_default();
            writeln!(out, "{},{},{}", r.epoch, r.train_loss, val).unwrap();
        }
        out
    }
}

/// Class weights for the train split over the classes that occur in the dataset.
pub fn train_class_weights(dataset: &Dataset) -> Result<ClassWeights> {
    let counts = class_counts(dataset, Some(Split::Train));
    class_weights_for(&counts, &dataset.classes_present())
}

/// Fits the normalizer on the train split and trains a fresh RefHist model.
pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<(RefHist, TrainingCurve)> {
    cfg.validate()?;
    let train_set = dataset.split_samples(Split::Train);
    if train_set.is_empty() {
        return Err(Error::InvalidConfig("train split is empty".into()));
    }
    let normalizer = fit_normalizer(train_set.iter().copied(), &cfg.norm)?
        .with_bins(cfg.bins)?
        .with_input_mode(cfg.input_mode);
    let mlp = MlpConfig {
        input_dim: normalizer.input_dim(),
        hidden: cfg.hidden,
        ..Default::default()
    };
    let model = MlpModel::new(mlp, &mut rng_from_seed(derive_seed(cfg.seed, "init")))?;
    train_model(RefHist { model, normalizer }, dataset, cfg)
}

/// Shared mini-batch loop: per epoch, shuffle the train split, run weighted
/// cross-entropy with Adam on each batch (the last partial batch included),
/// then score the validation split.
pub fn train_model<M>(
    mut model: M,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<(M, TrainingCurve)>
where
    M: Trainable + Sync,
{
    cfg.validate()?;
    let weights = train_class_weights(dataset)?;
    let train_inputs: Vec<(M::Input, ClassId)> = dataset
        .split_samples(Split::Train)
        .into_iter()
        .map(|c| Ok((model.prepare(c)?, c.label)))
        .collect::<Result<_>>()?;
    if train_inputs.is_empty() {
        return Err(Error::InvalidConfig("train split is empty".into()));
    }
    let val_inputs: Vec<(M::Input, ClassId)> = dataset
        .split_samples(Split::Val)
        .into_iter()
        .map(|c| Ok((model.prepare(c)?, c.label)))
        .collect::<Result<_>>()?;

    let adam = cfg.adam();
    let mut rng = rng_from_seed(derive_seed(cfg.seed, "shuffle"));
    let mut order: Vec<usize> = (0..train_inputs.len()).collect();
    let mut curve = TrainingCurve::default();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = model.zero_grads();
            for &i in batch {
                let (input, label) = &train_inputs[i];
                total_loss += model.accumulate(input, *label, weights.get(*label), &mut grads);
            }
            model.apply(&mut grads, batch.len(), &adam);
        }
        let val_balanced_accuracy = if val_inputs.is_empty() {
            None
        } else {
            let pairs: Vec<(ClassId, ClassId)> = val_inputs
                .par_iter()
                .map(|(input, label)| {
                    (*label, predict_from_logits(&model.prepared_logits(input)).0)
                })
                .collect();
            Some(EvalReport::from_pairs(&pairs, 0)?.balanced_accuracy)
        };
        curve.epochs.push(EpochRecord {
            epoch,
            train_loss: total_loss / train_inputs.len() as f64,
            val_balanced_accuracy,
        });
    }
    Ok((model, curve))
}

/// Confusion matrix (rows true, columns predicted) and recall-based metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
    /// Recall per class; `None` for classes absent from the evaluated set.
    pub per_class_accuracy: [Option<f64>; NUM_CLASSES],
    pub balanced_accuracy: f64,
    pub parameter_count: usize,
    pub samples: usize,
}

impl EvalReport {
    /// Builds the report from `(true, predicted)` pairs.
    pub fn from_pairs(pairs: &[(ClassId, ClassId)], parameter_count: usize) -> Result<Self> {
        let mut confusion = [[0usize; NUM_CLASSES]; NUM_CLASSES];
        for (t, p) in pairs {
            confusion[t.index()][p.index()] += 1;
        }
        Self::from_confusion(confusion, parameter_count)
    }

    pub fn from_confusion(
        confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
        parameter_count: usize,
    ) -> Result<Self> {
        let samples: usize = confusion.iter().flatten().sum();
        if samples == 0 {
            return Err(Error::InvalidConfig(
                "cannot evaluate an empty sample set".into(),
            ));
        }
        let mut per_class_accuracy = [None; NUM_CLASSES];
        for (i, row) in confusion.iter().enumerate() {
            let n: usize = row.iter().sum();
            if n > 0 {
                per_class_accuracy[i] = Some(row[i] as f64 / n as f64);
            }
        }
        let present: Vec<f64> = per_class_accuracy.iter().flatten().copied().collect();
        let balanced_accuracy = present.iter().sum::<f64>() / present.len() as f64;
        Ok(EvalReport {
            confusion,
            per_class_accuracy,
            balanced_accuracy,
            parameter_count,
            samples,
        })
    }

    pub fn row_sum(&self, class: ClassId) -> usize {
        self.confusion[class.index()].iter().sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Confusion matrix with a header row of predicted classes.
    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("true");
        for c in ClassId::ALL {
            write!(out, ",{}", c.name()).unwrap();
        }
        out.push('\n');
        for c in ClassId::ALL {
            out.push_str(c.name());
            for n in self.confusion[c.index()] {
                write!(out, ",{n}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Predicts every sample and accumulates the confusion matrix.
pub fn evaluate<C: CloudClassifier + ?Sized>(
    classifier: &C,
    samples: &[PointCloud],
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::InvalidConfig(
            "cannot evaluate an empty sample set".into(),
        ));
    }
    let pairs: Vec<(ClassId, ClassId)> = samples
        .par_iter()
        .map(|s| Ok((s.label, classifier.predict(s)?.0)))
        .collect::<Result<_>>()?;
    EvalReport::from_pairs(&pairs, classifier.parameter_count())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(spec: &[(ClassId, ClassId, usize)]) -> Vec<(ClassId, ClassId)> {
        spec.iter()
            .flat_map(|(t, p, n)| std::iter::repeat_n((*t, *p), *n))
            .collect()
    }

    #[test]
    fn perfect_predictor() {
        let p: Vec<(ClassId, ClassId)> = ClassId::ALL.iter().flat_map(|c| [(*c, *c); 3]).collect();
        let r = EvalReport::from_pairs(&p, 0).unwrap();
        assert_eq!(r.balanced_accuracy, 1.0);
        for i in 0..NUM_CLASSES {
            for j in 0..NUM_CLASSES {
                assert_eq!(r.confusion[i][j], if i == j { 3 } else { 0 });
            }
        }
    }

    #[test]
    fn mean_of_present_recalls() {
        use ClassId::*;
        let p = pairs(&[
            (Car, Car, 8),
            (Car, Pedestrian, 2),
            (Pedestrian, Pedestrian, 3),
            (Pedestrian, Car, 2),
        ]);
        let r = EvalReport::from_pairs(&p, 0).unwrap();
        assert!((r.balanced_accuracy - 0.7).abs() < 1e-12);
        assert_eq!(r.per_class_accuracy[2], None);
        assert_eq!(r.samples, 15);
    }

    #[test]
    fn constant_predictor_is_chance() {
        let p: Vec<(ClassId, ClassId)> = ClassId::ALL
            .iter()
            .flat_map(|c| [(*c, ClassId::TwoWheeler); 10])
            .collect();
        let r = EvalReport::from_pairs(&p, 0).unwrap();
        assert!((r.balanced_accuracy - 0.2).abs() < 1e-12);
    }

    #[test]
    fn empty_evaluation_rejected() {
        assert!(EvalReport::from_pairs(&[], 0).is_err());
    }

    #[test]
    fn confusion_csv_layout() {
        let r = EvalReport::from_pairs(&[(ClassId::Car, ClassId::Underridable)], 7).unwrap();
        let csv = r.confusion_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(
            lines[0],
            "true,car,pedestrian,overridable,two_wheeler,underridable"
        );
        assert_eq!(lines[1], "car,0,0,0,0,1");
        assert_eq!(lines.len(), 6);
    }

    #[test]
    fn rejects_bad_train_config() {
        let bad = [
            TrainConfig {
                epochs: 0,
                ..Default::default()
            },
            TrainConfig {
                batch_size: 0,
                ..Default::default()
            },
            TrainConfig {
                lr: 0.0,
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn curve_csv_header() {
        let curve = TrainingCurve {
            epochs: vec![EpochRecord {
                epoch: 1,
                train_loss: 0.5,
                val_balanced_accuracy: None,
            }],
        };
        assert_eq!(
            curve.to_csv(),
            "epoch,train_loss,val_balanced_accuracy\n1,0.5,\n"
        );
    }
}
