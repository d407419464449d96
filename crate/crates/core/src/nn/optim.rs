//! Mean squared error and the Adam optimizer.

use super::params::{ParameterSet, TensorKind};
use super::tensor::Scalar;
use super::train::TrainConfig;
use super::NnError;

/// Mean squared error and its gradient with respect to each prediction.
pub fn mse_loss(predictions: &[f64], labels: &[f64]) -> Result<(f64, Vec<f64>), NnError> {
    if predictions.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    if predictions.len() != labels.len() {
        return Err(NnError::ShapeMismatch(format!("{} predictions for {} labels", predictions.len(), labels.len())));
    }
    let m = predictions.len() as f64;
    let loss = predictions.iter().zip(labels).map(|(p, l)| (p - l).powi(2)).sum::<f64>() / m;
    let grads = predictions.iter().zip(labels).map(|(p, l)| 2.0 * (p - l) / m).collect();
    Ok((loss, grads))
}

/// First and second moment estimates, one vector per tensor (empty for buffers).
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<F: Scalar>(params: &ParameterSet<F>) -> Self {
        let zeros = |t: &super::params::NamedTensor<F>| {
            if t.kind == TensorKind::Weight {
                vec![0.0; t.data.len()]
            } else {
                Vec::new()
            }
        };
        Self { m: params.tensors().iter().map(zeros).collect(), v: params.tensors().iter().map(zeros).collect() }
    }

    /// In-place bias-corrected update for step `step` (1-based).
    pub fn apply<F: Scalar>(
        &mut self,
        params: &mut ParameterSet<F>,
        grads: &ParameterSet<F>,
        config: &TrainConfig,
        step: u64,
    ) -> Result<(), NnError> {
        params.check_layout(grads)?;
        if self.m.len() != params.tensors().len() {
            return Err(NnError::ShapeMismatch("optimizer state does not match parameters".into()));
        }
        if step == 0 {
            return Err(NnError::ShapeMismatch("adam step index starts at 1".into()));
        }
        let (b1, b2) = (config.beta1, config.beta2);
        let c1 = 1.0 - b1.powf(step as f64);
        let c2 = 1.0 - b2.powf(step as f64);
        for (i, (t, g)) in params.tensors_mut().iter_mut().zip(grads.tensors()).enumerate() {
            if t.kind != TensorKind::Weight {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (k, (p, gv)) in t.data.iter_mut().zip(&g.data).enumerate() {
                let gv = gv.as_f64();
                m[k] = b1 * m[k] + (1.0 - b1) * gv;
                v[k] = b2 * v[k] + (1.0 - b2) * gv * gv;
                let update = config.learning_rate * (m[k] / c1) / ((v[k] / c2).sqrt() + config.epsilon);
                *p = F::from_f64(p.as_f64() - update);
            }
        }
        Ok(())
    }
}

/// Pure form of [`AdamState::apply`].
pub fn adam_step<F: Scalar>(
    params: &ParameterSet<F>,
    grads: &ParameterSet<F>,
    state: &AdamState,
    config: &TrainConfig,
    step: u64,
) -> Result<(ParameterSet<F>, AdamState), NnError> {
    let mut p = params.clone();
    let mut s = state.clone();
    s.apply(&mut p, grads, config, step)?;
    Ok((p, s))
}

#[cfg(test)]
mod tests {
    use super::super::{build_model, minimal_config};
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mse_examples() {
        let (l, g) = mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!((l, g), (0.0, vec![0.0, 0.0]));
        let (l, g) = mse_loss(&[3.0], &[1.0]).unwrap();
        assert_eq!((l, g), (4.0, vec![4.0]));
        assert!(matches!(mse_loss(&[], &[]), Err(NnError::EmptyBatch)));
        assert!(mse_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn uniform_offset_loss_is_four(labels in prop::collection::vec(-100.0f64..100.0, 1..40)) {
            let preds: Vec<f64> = labels.iter().map(|l| l + 2.0).collect();
            let (l, _) = mse_loss(&preds, &labels).unwrap();
            prop_assert!((l - 4.0).abs() < 1e-9);
        }
    }

    fn setup() -> (ParameterSet<f64>, ParameterSet<f64>, TrainConfig) {
        let p = build_model::<f64>(&minimal_config()).unwrap();
        let mut g = p.zeros_like();
        for (i, t) in g.tensors_mut().iter_mut().enumerate() {
            if t.kind == TensorKind::Weight {
                for (k, v) in t.data.iter_mut().enumerate() {
                    *v = if (i + k) % 2 == 0 { 0.3 + k as f64 } else { -5.0 - i as f64 };
                }
            }
        }
        (p, g, TrainConfig::default())
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let (p, g, cfg) = setup();
        let (q, _) = adam_step(&p, &g, &AdamState::new(&p), &cfg, 1).unwrap();
        for ((a, b), gt) in p.tensors().iter().zip(q.tensors()).zip(g.tensors()) {
            for ((x, y), gv) in a.data.iter().zip(&b.data).zip(&gt.data) {
                if a.kind == TensorKind::Buffer {
                    assert_eq!(x, y);
                    continue;
                }
                let delta = y - x;
                assert!(delta.abs() <= cfg.learning_rate * (1.0 + 1e-12) && delta.abs() >= 0.999 * cfg.learning_rate);
                assert_eq!(delta.signum(), -gv.signum());
            }
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (p, g, cfg) = setup();
        let (q, _) = adam_step(&p, &g.zeros_like(), &AdamState::new(&p), &cfg, 1).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn step_is_pure() {
        let (p, g, cfg) = setup();
        let s = AdamState::new(&p);
        let a = adam_step(&p, &g, &s, &cfg, 3).unwrap();
        let b = adam_step(&p, &g, &s, &cfg, 3).unwrap();
        assert_eq!(a, b);
        assert!(adam_step(&p, &g, &s, &cfg, 0).is_err());
    }

    #[test]
    fn layout_mismatch_is_an_error() {
        let (p, _, cfg) = setup();
        let other =
            build_model::<f64>(&super::super::ModelConfig { stage_widths: vec![2, 4], ..minimal_config() }).unwrap();
        assert!(adam_step(&p, &other, &AdamState::new(&p), &cfg, 1).is_err());
    }
}
