//! Residual convolutional regressor with explicit backpropagation.
//!
//! Activations are stored channel-major (`C x N x H x W`), so every
//! convolution is one matrix product over an unfolded input and batch
//! normalization statistics are reductions over contiguous slices.
//!
//! Parameter layout, in order:
//! `stem.conv.weight`, `stem.bn.{gamma,beta,running_mean,running_var}`, then
//! for each stage `s` and block `b`: `stage{s}.block{b}.conv1.weight`,
//! `.bn1.*`, `.conv2.weight`, `.bn2.*` and, when the block changes shape,
//! `.proj.weight`; finally `head.weight` (`1 x C`) and `head.bias`.

mod checkpoint;
mod gradcheck;
mod model;
mod optim;
mod params;
mod tensor;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use gradcheck::{gradient_check, minimal_config, relu_margin, TensorCheck};
pub use model::{backward, batch_from_images, forward, loss_and_gradients, BatchNormStats, Network};
pub use optim::{adam_step, mse_loss, AdamState};
pub use params::{NamedTensor, ParameterSet, TensorKind};
pub use tensor::{Activation, Scalar};
pub use train::{
    evaluate_mse, train, write_loss_curve, EpochLoss, LabelScaler, Split, TrainConfig, TrainOutcome, TrainedModel,
};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("no training performed: {0}")]
    NoTraining(String),
    #[error("training diverged at epoch {0}")]
    Diverged(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub(crate) const BN_EPSILON: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_width: usize,
    pub input_height: usize,
    pub input_channels: usize,
    pub stem_channels: usize,
    pub stem_stride: usize,
    pub stage_widths: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    pub seed: u64,
}

/// Depths of the default scale ladder.
pub const LADDER_DEPTHS: [usize; 4] = [10, 18, 26, 34];

impl ModelConfig {
    /// Ladder member of the given depth at the default widths.
    pub fn ladder(
        depth: usize,
        input_width: usize,
        input_height: usize,
        input_channels: usize,
        seed: u64,
    ) -> Result<Self, NnError> {
        let blocks = match depth {
            10 => vec![1, 1, 1, 1],
            18 => vec![2, 2, 2, 2],
            26 => vec![2, 3, 4, 3],
            34 => vec![3, 4, 6, 3],
            other => {
                return Err(NnError::InvalidConfig(format!(
                    "no ladder member of depth {other} (expected one of {LADDER_DEPTHS:?})"
                )))
            }
        };
        let cfg = Self {
            input_width,
            input_height,
            input_channels,
            stem_channels: 8,
            stem_stride: 2,
            stage_widths: vec![8, 16, 24, 32],
            blocks_per_stage: blocks,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::InvalidConfig(m.to_string()));
        if self.input_width == 0 || self.input_height == 0 || self.input_channels == 0 {
            return bad("input dimensions must be >= 1");
        }
        if self.stem_channels == 0 || self.stem_stride == 0 {
            return bad("stem channels and stride must be >= 1");
        }
        if self.stage_widths.is_empty() || self.stage_widths.len() != self.blocks_per_stage.len() {
            return bad("stage_widths and blocks_per_stage must be non-empty and of equal length");
        }
        if self.stage_widths.contains(&0) || self.blocks_per_stage.contains(&0) {
            return bad("stage widths and block counts must be >= 1");
        }
        Ok(())
    }

    /// Weighted layers: two per block plus stem and head.
    pub fn depth(&self) -> usize {
        2 * self.blocks_per_stage.iter().sum::<usize>() + 2
    }
}

/// Seeded initialization: He-scaled normal kernels, unit scales, zero
/// offsets and zero head bias.
pub fn build_model<F: Scalar>(config: &ModelConfig) -> Result<ParameterSet<F>, NnError> {
    config.validate()?;
    let net = Network::new(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let tensors = net
        .layout()
        .iter()
        .map(|spec| {
            let n: usize = spec.shape.iter().product();
            let data = match spec.init {
                model::Init::He { fan_in } => {
                    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                    (0..n).map(|_| F::from_f64(normal.sample(&mut rng))).collect()
                }
                model::Init::Constant(v) => vec![F::from_f64(v); n],
            };
            NamedTensor { name: spec.name.clone(), shape: spec.shape.clone(), kind: spec.kind, data }
        })
        .collect();
    Ok(ParameterSet::from_tensors(tensors))
}
