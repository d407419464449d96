//! Central finite-difference verification of the analytic gradients.

use serde::Serialize;

use crate::image::ImageTensor;

use super::model::{batch_from_images, Network};
use super::params::{ParameterSet, TensorKind};
use super::{ModelConfig, NnError};

/// Worst disagreement found in one parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub elements: usize,
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
}

/// Gradients smaller than this are compared in absolute terms.
const RELATIVE_FLOOR: f64 = 1e-6;

/// Smallest configuration exercising every layer kind: stem, identity and
/// projection skips, pooling and head.
pub fn minimal_config() -> ModelConfig {
    ModelConfig {
        input_width: 6,
        input_height: 6,
        input_channels: 3,
        stem_channels: 2,
        stem_stride: 1,
        stage_widths: vec![2, 3],
        blocks_per_stage: vec![1, 1],
        seed: 17,
    }
}

/// Compares analytic and central-difference gradients for every trainable
/// element, in double precision.
pub fn gradient_check(
    params: &ParameterSet<f64>,
    config: &ModelConfig,
    images: &[&ImageTensor],
    labels: &[f64],
    epsilon: f64,
) -> Result<Vec<TensorCheck>, NnError> {
    let net = Network::new(config)?;
    let x = batch_from_images::<f64>(images, config)?;
    let (_, analytic, _) = net.loss_and_gradients(params, &x, labels)?;
    let mut probe = params.clone();
    let mut report = Vec::new();
    for ti in 0..params.tensors().len() {
        let t = &params.tensors()[ti];
        if t.kind != TensorKind::Weight {
            continue;
        }
        let (mut max_rel, mut max_abs) = (0.0f64, 0.0f64);
        for k in 0..t.data.len() {
            let original = t.data[k];
            probe.tensors_mut()[ti].data[k] = original + epsilon;
            let (plus, _, _) = net.loss_and_gradients(&probe, &x, labels)?;
            probe.tensors_mut()[ti].data[k] = original - epsilon;
            let (minus, _, _) = net.loss_and_gradients(&probe, &x, labels)?;
            probe.tensors_mut()[ti].data[k] = original;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic.tensors()[ti].data[k];
            let abs = (a - numeric).abs();
            max_abs = max_abs.max(abs);
            max_rel = max_rel.max(abs / a.abs().max(numeric.abs()).max(RELATIVE_FLOOR));
        }
        report.push(TensorCheck {
            name: t.name.clone(),
            elements: t.data.len(),
            max_relative_error: max_rel,
            max_absolute_error: max_abs,
        });
    }
    Ok(report)
}

/// Smallest distance of any rectifier input from zero for this batch.
pub fn relu_margin(params: &ParameterSet<f64>, config: &ModelConfig, images: &[&ImageTensor]) -> Result<f64, NnError> {
    let net = Network::new(config)?;
    let x = batch_from_images::<f64>(images, config)?;
    net.relu_margin(params, &x)
}

#[cfg(test)]
mod tests {
    use super::super::build_model;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let cfg = minimal_config();
        let params = build_model::<f64>(&cfg).unwrap();
        let n = cfg.input_width * cfg.input_height * cfg.input_channels;
        // First seeded batch whose rectifier inputs all sit clear of the kink,
        // so a step of 1e-4 cannot cross it.
        let images = (0..64u64)
            .map(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..4)
                    .map(|_| {
                        ImageTensor::new(
                            cfg.input_width,
                            cfg.input_height,
                            cfg.input_channels,
                            (0..n).map(|_| rng.random()).collect(),
                        )
                        .unwrap()
                    })
                    .collect::<Vec<_>>()
            })
            .find(|imgs| relu_margin(&params, &cfg, &imgs.iter().collect::<Vec<_>>()).unwrap() > 2e-3)
            .expect("a batch clear of rectifier kinks");
        let refs: Vec<_> = images.iter().collect();
        let report = gradient_check(&params, &cfg, &refs, &[0.5, -1.0, 1.5, 0.0], 1e-4).unwrap();
        let trainable = params.tensors().iter().filter(|t| t.kind == TensorKind::Weight).count();
        assert_eq!(report.len(), trainable);
        for r in &report {
            assert!(r.max_relative_error < 1e-3, "{r:?}");
        }
    }
}
