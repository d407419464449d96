//! Mini-batch training with best-validation checkpointing.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::image::ImageTensor;

use super::model::{batch_from_images, Network};
use super::optim::AdamState;
use super::params::ParameterSet;
use super::{build_model, ModelConfig, NnError};

/// Samples evaluated per forward pass during inference.
const EVAL_CHUNK: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 50, batch_size: 64, learning_rate: 0.001, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.epochs == 0 {
            return Err(NnError::NoTraining("epochs = 0".into()));
        }
        if self.batch_size == 0 {
            return Err(NnError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NnError::InvalidConfig("learning_rate must be positive".into()));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.epsilon > 0.0) {
            return Err(NnError::InvalidConfig("adam betas must lie in [0, 1) and epsilon be positive".into()));
        }
        Ok(())
    }
}

/// Images paired with labels in dB.
#[derive(Debug, Clone, Copy)]
pub struct Split<'a> {
    pub images: &'a [ImageTensor],
    pub labels: &'a [f64],
}

impl<'a> Split<'a> {
    pub fn new(images: &'a [ImageTensor], labels: &'a [f64]) -> Result<Self, NnError> {
        if images.len() != labels.len() {
            return Err(NnError::ShapeMismatch(format!("{} images for {} labels", images.len(), labels.len())));
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Affine map between dB labels and the network's standardized output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelScaler {
    pub mean: f64,
    pub std: f64,
}

impl LabelScaler {
    pub fn fit(labels: &[f64]) -> Self {
        let n = labels.len().max(1) as f64;
        let mean = labels.iter().sum::<f64>() / n;
        let std = (labels.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n).sqrt();
        Self { mean, std: if std > 1e-9 { std } else { 1.0 } }
    }

    pub fn standardize(&self, db: f64) -> f64 {
        (db - self.mean) / self.std
    }

    pub fn restore(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Network parameters together with everything needed to predict in dB.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub params: ParameterSet<f32>,
    pub scaler: LabelScaler,
}

impl TrainedModel {
    /// Predicted received power in dB, one per image.
    pub fn predict(&self, images: &[&ImageTensor]) -> Result<Vec<f64>, NnError> {
        let net = Network::new(&self.config)?;
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(EVAL_CHUNK) {
            let x = batch_from_images::<f32>(chunk, &self.config)?;
            out.extend(net.forward_eval(&self.params, &x)?.into_iter().map(|z| self.scaler.restore(z as f64)));
        }
        Ok(out)
    }
}

/// Mean squared error in dB² over a split, evaluation mode.
pub fn evaluate_mse(model: &TrainedModel, split: Split<'_>) -> Result<f64, NnError> {
    if split.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    let refs: Vec<&ImageTensor> = split.images.iter().collect();
    let preds = model.predict(&refs)?;
    Ok(preds.iter().zip(split.labels).map(|(p, l)| (p - l).powi(2)).sum::<f64>() / split.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Mean training-mode batch loss, in dB².
    pub train_mse: f64,
    /// Evaluation-mode validation loss, in dB².
    pub val_mse: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation loss.
    pub model: TrainedModel,
    pub curve: Vec<EpochLoss>,
    pub best_epoch: usize,
    /// Evaluation-mode training loss of the initial parameters, in dB².
    pub initial_train_mse: f64,
}

pub fn train(
    model_config: &ModelConfig,
    train_split: Split<'_>,
    val_split: Split<'_>,
    config: &TrainConfig,
) -> Result<TrainOutcome, NnError> {
    config.validate()?;
    if train_split.is_empty() {
        return Err(NnError::NoTraining("empty training split".into()));
    }
    if val_split.is_empty() {
        return Err(NnError::NoTraining("empty validation split".into()));
    }
    let net = Network::new(model_config)?;
    let scaler = LabelScaler::fit(train_split.labels);
    let mut model = TrainedModel { config: model_config.clone(), params: build_model::<f32>(model_config)?, scaler };
    let initial_train_mse = evaluate_mse(&model, train_split)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_split.len()).collect();
    let mut adam = AdamState::new(&model.params);
    let mut step = 0u64;
    let mut curve = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ParameterSet<f32>)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            // A lone trailing sample gives degenerate batch statistics.
            if chunk.len() == 1 && order.len() > 1 {
                continue;
            }
            let images: Vec<&ImageTensor> = chunk.iter().map(|&i| &train_split.images[i]).collect();
            let labels: Vec<f64> = chunk.iter().map(|&i| scaler.standardize(train_split.labels[i])).collect();
            let x = batch_from_images::<f32>(&images, model_config)?;
            let (loss, grads, stats) = net.loss_and_gradients(&model.params, &x, &labels)?;
            step += 1;
            adam.apply(&mut model.params, &grads, config, step)?;
            net.update_running_stats(&mut model.params, &stats);
            loss_sum += loss;
            batches += 1;
        }
        let train_mse = loss_sum / batches.max(1) as f64 * scaler.std * scaler.std;
        let val_mse = evaluate_mse(&model, val_split)?;
        if !(train_mse.is_finite() && val_mse.is_finite() && model.params.is_finite()) {
            return Err(NnError::Diverged(epoch));
        }
        curve.push(EpochLoss { epoch, train_mse, val_mse });
        if best.as_ref().is_none_or(|b| val_mse < b.0) {
            best = Some((val_mse, epoch, model.params.clone()));
        }
    }

    let (_, best_epoch, params) = best.expect("at least one epoch ran");
    model.params = params;
    Ok(TrainOutcome { model, curve, best_epoch, initial_train_mse })
}

/// Loss curve as CSV with columns `epoch,train_mse,val_mse`.
pub fn write_loss_curve(path: &Path, curve: &[EpochLoss]) -> Result<(), NnError> {
    let io = |e: csv::Error| NnError::Io { path: path.display().to_string(), source: e.into() };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for row in curve {
        w.serialize(row).map_err(io)?;
    }
    w.flush().map_err(|source| NnError::Io { path: path.display().to_string(), source })
}
