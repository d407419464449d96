//! Network structure, forward passes and reverse-mode gradients.

use crate::image::ImageTensor;

use super::optim::mse_loss;
use super::params::{ParameterSet, TensorKind};
use super::tensor::{conv_backward, conv_forward, Activation, ConvGeometry, Scalar};
use super::{ModelConfig, NnError, BN_EPSILON, BN_MOMENTUM};

#[derive(Debug, Clone, Copy)]
pub(crate) enum Init {
    He { fan_in: usize },
    Constant(f64),
}

#[derive(Debug, Clone)]
pub(crate) struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: TensorKind,
    pub init: Init,
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    weight: usize,
    geometry: ConvGeometry,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

#[derive(Debug, Clone, Copy)]
struct Block {
    conv1: Conv,
    bn1: Norm,
    conv2: Conv,
    bn2: Norm,
    proj: Option<Conv>,
}

/// Batch statistics of one normalization layer, in layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

/// Layer graph derived from a [`ModelConfig`].
#[derive(Debug, Clone)]
pub struct Network {
    config: ModelConfig,
    stem: Conv,
    stem_bn: Norm,
    blocks: Vec<Block>,
    head_weight: usize,
    head_bias: usize,
    last_width: usize,
    layout: Vec<ParamSpec>,
}

struct LayoutBuilder {
    specs: Vec<ParamSpec>,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, shape: Vec<usize>, kind: TensorKind, init: Init) -> usize {
        self.specs.push(ParamSpec { name, shape, kind, init });
        self.specs.len() - 1
    }

    fn conv(&mut self, prefix: &str, geometry: ConvGeometry) -> Conv {
        let g = geometry;
        let weight = self.push(
            format!("{prefix}.weight"),
            vec![g.out_channels, g.in_channels, g.kernel, g.kernel],
            TensorKind::Weight,
            Init::He { fan_in: g.patch_len() },
        );
        Conv { weight, geometry }
    }

    fn norm(&mut self, prefix: &str, channels: usize) -> Norm {
        Norm {
            gamma: self.push(format!("{prefix}.gamma"), vec![channels], TensorKind::Weight, Init::Constant(1.0)),
            beta: self.push(format!("{prefix}.beta"), vec![channels], TensorKind::Weight, Init::Constant(0.0)),
            mean: self.push(format!("{prefix}.running_mean"), vec![channels], TensorKind::Buffer, Init::Constant(0.0)),
            var: self.push(format!("{prefix}.running_var"), vec![channels], TensorKind::Buffer, Init::Constant(1.0)),
        }
    }
}

fn conv3(cin: usize, cout: usize, stride: usize) -> ConvGeometry {
    ConvGeometry { in_channels: cin, out_channels: cout, kernel: 3, stride, pad: 1 }
}

impl Network {
    pub fn new(config: &ModelConfig) -> Result<Self, NnError> {
        config.validate()?;
        let mut b = LayoutBuilder { specs: Vec::new() };
        let stem = b.conv("stem.conv", conv3(config.input_channels, config.stem_channels, config.stem_stride));
        let stem_bn = b.norm("stem.bn", config.stem_channels);
        let mut blocks = Vec::new();
        let mut cin = config.stem_channels;
        for (s, (&width, &count)) in config.stage_widths.iter().zip(&config.blocks_per_stage).enumerate() {
            for k in 0..count {
                let stride = if s > 0 && k == 0 { 2 } else { 1 };
                let p = format!("stage{s}.block{k}");
                let conv1 = b.conv(&format!("{p}.conv1"), conv3(cin, width, stride));
                let bn1 = b.norm(&format!("{p}.bn1"), width);
                let conv2 = b.conv(&format!("{p}.conv2"), conv3(width, width, 1));
                let bn2 = b.norm(&format!("{p}.bn2"), width);
                let proj = (stride != 1 || cin != width).then(|| {
                    b.conv(
                        &format!("{p}.proj"),
                        ConvGeometry { in_channels: cin, out_channels: width, kernel: 1, stride, pad: 0 },
                    )
                });
                blocks.push(Block { conv1, bn1, conv2, bn2, proj });
                cin = width;
            }
        }
        let head_weight = b.push("head.weight".into(), vec![1, cin], TensorKind::Weight, Init::He { fan_in: cin });
        let head_bias = b.push("head.bias".into(), vec![1], TensorKind::Weight, Init::Constant(0.0));
        Ok(Self {
            config: config.clone(),
            stem,
            stem_bn,
            blocks,
            head_weight,
            head_bias,
            last_width: cin,
            layout: b.specs,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub(crate) fn layout(&self) -> &[ParamSpec] {
        &self.layout
    }

    fn check_params<F: Scalar>(&self, params: &ParameterSet<F>) -> Result<(), NnError> {
        let ok = params.tensors().len() == self.layout.len()
            && params.tensors().iter().zip(&self.layout).all(|(t, s)| t.name == s.name && t.shape == s.shape);
        if ok {
            Ok(())
        } else {
            Err(NnError::ShapeMismatch("parameter set does not match the model config".into()))
        }
    }

    fn check_input<F: Scalar>(&self, x: &Activation<F>) -> Result<(), NnError> {
        let c = &self.config;
        if x.batch == 0 {
            return Err(NnError::EmptyBatch);
        }
        if (x.channels, x.height, x.width) != (c.input_channels, c.input_height, c.input_width) {
            return Err(NnError::ShapeMismatch(format!(
                "input {}x{}x{} does not match model input {}x{}x{}",
                x.width, x.height, x.channels, c.input_width, c.input_height, c.input_channels
            )));
        }
        Ok(())
    }

    /// Evaluation-mode outputs (running statistics), one per sample.
    pub fn forward_eval<F: Scalar>(&self, params: &ParameterSet<F>, x: &Activation<F>) -> Result<Vec<F>, NnError> {
        self.check_params(params)?;
        self.check_input(x)?;
        let mut a = conv_forward(x, params.data(self.stem.weight), &self.stem.geometry);
        norm_eval(&mut a, params, self.stem_bn);
        relu(&mut a);
        for blk in &self.blocks {
            let mut h = conv_forward(&a, params.data(blk.conv1.weight), &blk.conv1.geometry);
            norm_eval(&mut h, params, blk.bn1);
            relu(&mut h);
            let mut h2 = conv_forward(&h, params.data(blk.conv2.weight), &blk.conv2.geometry);
            norm_eval(&mut h2, params, blk.bn2);
            match blk.proj {
                Some(p) => h2.add_assign(&conv_forward(&a, params.data(p.weight), &p.geometry)),
                None => h2.add_assign(&a),
            }
            relu(&mut h2);
            a = h2;
        }
        Ok(self.head(params, &global_pool(&a), a.batch))
    }

    fn head<F: Scalar>(&self, params: &ParameterSet<F>, pooled: &[F], batch: usize) -> Vec<F> {
        let w = params.data(self.head_weight);
        let bias = params.data(self.head_bias)[0];
        (0..batch)
            .map(|n| {
                let mut acc = bias.as_f64();
                for c in 0..self.last_width {
                    acc += w[c].as_f64() * pooled[c * batch + n].as_f64();
                }
                F::from_f64(acc)
            })
            .collect()
    }

    /// Training-mode forward pass keeping what the backward pass needs.
    fn forward_train<F: Scalar>(&self, params: &ParameterSet<F>, x: &Activation<F>) -> Result<TrainCache<F>, NnError> {
        self.check_params(params)?;
        self.check_input(x)?;
        let mut stats = Vec::new();
        let mut margin = f64::INFINITY;
        let mut a = conv_forward(x, params.data(self.stem.weight), &self.stem.geometry);
        let stem_bn = norm_train(&mut a, params, self.stem_bn, &mut stats);
        margin = margin.min(relu_margin(&a));
        relu(&mut a);
        let mut acts = vec![a];
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for blk in &self.blocks {
            let input = acts.last().expect("stem output present");
            let mut h = conv_forward(input, params.data(blk.conv1.weight), &blk.conv1.geometry);
            let bn1 = norm_train(&mut h, params, blk.bn1, &mut stats);
            margin = margin.min(relu_margin(&h));
            relu(&mut h);
            let mut h2 = conv_forward(&h, params.data(blk.conv2.weight), &blk.conv2.geometry);
            let bn2 = norm_train(&mut h2, params, blk.bn2, &mut stats);
            match blk.proj {
                Some(p) => h2.add_assign(&conv_forward(input, params.data(p.weight), &p.geometry)),
                None => h2.add_assign(input),
            }
            margin = margin.min(relu_margin(&h2));
            relu(&mut h2);
            blocks.push(BlockCache { a1: h, bn1, bn2 });
            acts.push(h2);
        }
        let last = acts.last().expect("at least the stem output");
        let pooled = global_pool(last);
        let outputs = self.head(params, &pooled, last.batch);
        Ok(TrainCache { input: x.clone(), stem_bn, acts, blocks, pooled, outputs, stats, relu_margin: margin })
    }

    /// Gradients of the loss with respect to every tensor, given the loss
    /// gradient for each output.
    fn backward_from<F: Scalar>(
        &self,
        params: &ParameterSet<F>,
        cache: TrainCache<F>,
        doutputs: &[F],
    ) -> ParameterSet<F> {
        let mut grads = params.zeros_like();
        let TrainCache { input, stem_bn, mut acts, blocks, pooled, .. } = cache;
        let last = acts.last().expect("stem output present");
        let (batch, hw) = (last.batch, last.height * last.width);

        // Head and global pooling.
        let w = params.data(self.head_weight).to_vec();
        {
            let gw = grads.data_mut(self.head_weight);
            for c in 0..self.last_width {
                let mut acc = 0.0;
                for n in 0..batch {
                    acc += doutputs[n].as_f64() * pooled[c * batch + n].as_f64();
                }
                gw[c] = F::from_f64(acc);
            }
        }
        grads.data_mut(self.head_bias)[0] = F::from_f64(doutputs.iter().map(|d| d.as_f64()).sum());
        let mut d = last.same_shape();
        for c in 0..self.last_width {
            for n in 0..batch {
                let g = F::from_f64(w[c].as_f64() * doutputs[n].as_f64() / hw as f64);
                d.data[(c * batch + n) * hw..][..hw].fill(g);
            }
        }

        for (i, blk) in self.blocks.iter().enumerate().rev() {
            let out = acts.pop().expect("block output present");
            let input = acts.last().expect("block input present");
            let cache = &blocks[i];
            relu_backward(&mut d, &out);
            drop(out);
            // Residual branch.
            let mut dh = d.clone();
            let (dg2, db2) = norm_backward(&mut dh, &cache.bn2, params.data(blk.bn2.gamma));
            store(&mut grads, blk.bn2.gamma, dg2);
            store(&mut grads, blk.bn2.beta, db2);
            let (da1, dw2) = conv_backward(&cache.a1, params.data(blk.conv2.weight), &blk.conv2.geometry, &dh, true);
            store(&mut grads, blk.conv2.weight, dw2);
            let mut da1 = da1.expect("requested");
            relu_backward(&mut da1, &cache.a1);
            let (dg1, db1) = norm_backward(&mut da1, &cache.bn1, params.data(blk.bn1.gamma));
            store(&mut grads, blk.bn1.gamma, dg1);
            store(&mut grads, blk.bn1.beta, db1);
            let (dx, dw1) = conv_backward(input, params.data(blk.conv1.weight), &blk.conv1.geometry, &da1, true);
            store(&mut grads, blk.conv1.weight, dw1);
            let mut dx = dx.expect("requested");
            // Skip path.
            match blk.proj {
                Some(p) => {
                    let (dskip, dwp) = conv_backward(input, params.data(p.weight), &p.geometry, &d, true);
                    store(&mut grads, p.weight, dwp);
                    dx.add_assign(&dskip.expect("requested"));
                }
                None => dx.add_assign(&d),
            }
            d = dx;
        }

        let stem_out = acts.pop().expect("stem output present");
        relu_backward(&mut d, &stem_out);
        let (dg, db) = norm_backward(&mut d, &stem_bn, params.data(self.stem_bn.gamma));
        store(&mut grads, self.stem_bn.gamma, dg);
        store(&mut grads, self.stem_bn.beta, db);
        let (_, dw) = conv_backward(&input, params.data(self.stem.weight), &self.stem.geometry, &d, false);
        store(&mut grads, self.stem.weight, dw);
        grads
    }

    /// Training-mode MSE loss against `labels`, its gradients and the batch
    /// statistics observed by each normalization layer.
    pub fn loss_and_gradients<F: Scalar>(
        &self,
        params: &ParameterSet<F>,
        x: &Activation<F>,
        labels: &[f64],
    ) -> Result<(f64, ParameterSet<F>, Vec<BatchNormStats>), NnError> {
        if labels.len() != x.batch {
            return Err(NnError::ShapeMismatch(format!("{} labels for a batch of {}", labels.len(), x.batch)));
        }
        let mut cache = self.forward_train(params, x)?;
        let preds: Vec<f64> = cache.outputs.iter().map(|v| v.as_f64()).collect();
        let (loss, dpred) = mse_loss(&preds, labels)?;
        let dpred: Vec<F> = dpred.into_iter().map(F::from_f64).collect();
        let stats = std::mem::take(&mut cache.stats);
        let grads = self.backward_from(params, cache, &dpred);
        Ok((loss, grads, stats))
    }

    /// Smallest absolute rectifier input of a training-mode pass. Finite
    /// differences with steps well below this stay on one side of every kink.
    pub fn relu_margin<F: Scalar>(&self, params: &ParameterSet<F>, x: &Activation<F>) -> Result<f64, NnError> {
        Ok(self.forward_train(params, x)?.relu_margin)
    }

    /// Exponential moving update of running statistics (unbiased variance).
    pub fn update_running_stats<F: Scalar>(&self, params: &mut ParameterSet<F>, stats: &[BatchNormStats]) {
        let norms = std::iter::once(self.stem_bn).chain(self.blocks.iter().flat_map(|b| [b.bn1, b.bn2]));
        for (norm, s) in norms.zip(stats) {
            let unbias = if s.count > 1 { s.count as f64 / (s.count - 1) as f64 } else { 1.0 };
            for (r, &m) in params.data_mut(norm.mean).iter_mut().zip(&s.mean) {
                *r = F::from_f64((1.0 - BN_MOMENTUM) * r.as_f64() + BN_MOMENTUM * m);
            }
            for (r, &v) in params.data_mut(norm.var).iter_mut().zip(&s.var) {
                *r = F::from_f64((1.0 - BN_MOMENTUM) * r.as_f64() + BN_MOMENTUM * v * unbias);
            }
        }
    }
}

fn store<F: Scalar>(grads: &mut ParameterSet<F>, index: usize, values: Vec<F>) {
    *grads.data_mut(index) = values;
}

struct NormCache<F> {
    xhat: Vec<F>,
    inv_std: Vec<f64>,
}

struct BlockCache<F> {
    a1: Activation<F>,
    bn1: NormCache<F>,
    bn2: NormCache<F>,
}

struct TrainCache<F> {
    input: Activation<F>,
    stem_bn: NormCache<F>,
    /// Stem output followed by each block output.
    acts: Vec<Activation<F>>,
    blocks: Vec<BlockCache<F>>,
    pooled: Vec<F>,
    outputs: Vec<F>,
    stats: Vec<BatchNormStats>,
    relu_margin: f64,
}

fn relu<F: Scalar>(a: &mut Activation<F>) {
    for v in &mut a.data {
        if *v < F::zero() {
            *v = F::zero();
        }
    }
}

/// Distance of the closest rectifier input to the kink at zero.
fn relu_margin<F: Scalar>(a: &Activation<F>) -> f64 {
    a.data.iter().map(|v| v.as_f64().abs()).fold(f64::INFINITY, f64::min)
}

fn relu_backward<F: Scalar>(d: &mut Activation<F>, out: &Activation<F>) {
    for (g, &o) in d.data.iter_mut().zip(&out.data) {
        if o <= F::zero() {
            *g = F::zero();
        }
    }
}

fn global_pool<F: Scalar>(a: &Activation<F>) -> Vec<F> {
    let hw = a.height * a.width;
    a.data.chunks(hw).map(|c| F::from_f64(c.iter().map(|v| v.as_f64()).sum::<f64>() / hw as f64)).collect()
}

fn norm_eval<F: Scalar>(a: &mut Activation<F>, params: &ParameterSet<F>, n: Norm) {
    let (gamma, beta) = (params.data(n.gamma), params.data(n.beta));
    let (mean, var) = (params.data(n.mean), params.data(n.var));
    for c in 0..a.channels {
        let scale = gamma[c].as_f64() / (var[c].as_f64() + BN_EPSILON).sqrt();
        let shift = beta[c].as_f64() - mean[c].as_f64() * scale;
        let (scale, shift) = (F::from_f64(scale), F::from_f64(shift));
        for v in a.channel_mut(c) {
            *v = *v * scale + shift;
        }
    }
}

fn norm_train<F: Scalar>(
    a: &mut Activation<F>,
    params: &ParameterSet<F>,
    n: Norm,
    stats: &mut Vec<BatchNormStats>,
) -> NormCache<F> {
    let (gamma, beta) = (params.data(n.gamma), params.data(n.beta));
    let m = a.plane();
    let mut xhat = vec![F::zero(); a.data.len()];
    let mut s = BatchNormStats { mean: Vec::with_capacity(a.channels), var: Vec::with_capacity(a.channels), count: m };
    let mut inv_std = Vec::with_capacity(a.channels);
    for c in 0..a.channels {
        let ch = a.channel_mut(c);
        let mean = ch.iter().map(|v| v.as_f64()).sum::<f64>() / m as f64;
        let var = ch.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / m as f64;
        let inv = 1.0 / (var + BN_EPSILON).sqrt();
        let (g, b) = (gamma[c], beta[c]);
        for (v, xh) in ch.iter_mut().zip(&mut xhat[c * m..(c + 1) * m]) {
            *xh = F::from_f64((v.as_f64() - mean) * inv);
            *v = g * *xh + b;
        }
        s.mean.push(mean);
        s.var.push(var);
        inv_std.push(inv);
    }
    stats.push(s);
    NormCache { xhat, inv_std }
}

/// Turns `d` (gradient w.r.t. the normalized output) into the gradient
/// w.r.t. the layer input; returns the scale and offset gradients.
fn norm_backward<F: Scalar>(d: &mut Activation<F>, cache: &NormCache<F>, gamma: &[F]) -> (Vec<F>, Vec<F>) {
    let m = d.plane();
    let mut dgamma = Vec::with_capacity(d.channels);
    let mut dbeta = Vec::with_capacity(d.channels);
    for c in 0..d.channels {
        let xh = &cache.xhat[c * m..(c + 1) * m];
        let ch = d.channel_mut(c);
        let (mut sum, mut dot) = (0.0f64, 0.0f64);
        for (g, x) in ch.iter().zip(xh) {
            sum += g.as_f64();
            dot += g.as_f64() * x.as_f64();
        }
        let k = gamma[c].as_f64() * cache.inv_std[c];
        let (mean_g, mean_gx) = (sum / m as f64, dot / m as f64);
        for (g, x) in ch.iter_mut().zip(xh) {
            *g = F::from_f64(k * (g.as_f64() - mean_g - x.as_f64() * mean_gx));
        }
        dgamma.push(F::from_f64(dot));
        dbeta.push(F::from_f64(sum));
    }
    (dgamma, dbeta)
}

/// Floor on the per-image standard deviation so flat images stay finite.
const MIN_INPUT_STD: f64 = 1.0;

/// Packs images into a channel-major batch. Each image is standardized to
/// zero mean and unit variance over all of its values, which removes global
/// exposure differences between images.
pub fn batch_from_images<F: Scalar>(images: &[&ImageTensor], config: &ModelConfig) -> Result<Activation<F>, NnError> {
    if images.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    let (w, h, c) = (config.input_width, config.input_height, config.input_channels);
    let mut x = Activation::zeros(c, images.len(), h, w);
    for (n, img) in images.iter().enumerate() {
        if (img.width(), img.height(), img.channels()) != (w, h, c) {
            return Err(NnError::ShapeMismatch(format!(
                "image {}x{}x{} does not match model input {w}x{h}x{c}",
                img.width(),
                img.height(),
                img.channels()
            )));
        }
        let data = img.data();
        let count = data.len() as f64;
        let mean = data.iter().map(|&v| f64::from(v)).sum::<f64>() / count;
        let var = data.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / count;
        let scale = 1.0 / var.sqrt().max(MIN_INPUT_STD);
        for ch in 0..c {
            let plane = &mut x.data[(ch * images.len() + n) * h * w..][..h * w];
            for (p, v) in plane.iter_mut().enumerate() {
                *v = F::from_f64((f64::from(data[p * c + ch]) - mean) * scale);
            }
        }
    }
    Ok(x)
}

/// Evaluation-mode raw outputs for a batch of images.
pub fn forward<F: Scalar>(
    params: &ParameterSet<F>,
    config: &ModelConfig,
    images: &[&ImageTensor],
) -> Result<Vec<f64>, NnError> {
    let net = Network::new(config)?;
    let x = batch_from_images::<F>(images, config)?;
    Ok(net.forward_eval(params, &x)?.into_iter().map(|v| v.as_f64()).collect())
}

/// Training-mode loss and gradients for a batch of images.
pub fn loss_and_gradients<F: Scalar>(
    params: &ParameterSet<F>,
    config: &ModelConfig,
    images: &[&ImageTensor],
    labels: &[f64],
) -> Result<(f64, ParameterSet<F>), NnError> {
    let net = Network::new(config)?;
    let x = batch_from_images::<F>(images, config)?;
    let (loss, grads, _) = net.loss_and_gradients(params, &x, labels)?;
    Ok((loss, grads))
}

/// Gradients of the training-mode MSE loss with respect to every parameter.
pub fn backward<F: Scalar>(
    params: &ParameterSet<F>,
    config: &ModelConfig,
    images: &[&ImageTensor],
    labels: &[f64],
) -> Result<ParameterSet<F>, NnError> {
    loss_and_gradients(params, config, images, labels).map(|(_, g)| g)
}

#[cfg(test)]
mod tests {
    use super::super::{build_model, minimal_config};
    use super::*;

    fn images(n: usize, w: usize, h: usize, c: usize, seed: u64) -> Vec<ImageTensor> {
        (0..n)
            .map(|k| {
                let data = (0..w * h * c)
                    .map(|i| ((i as u64 * 2_654_435_761 + k as u64 * 97 + seed * 31) % 251) as u8)
                    .collect();
                ImageTensor::new(w, h, c, data).unwrap()
            })
            .collect()
    }

    #[test]
    fn zero_parameters_give_head_bias() {
        let cfg = ModelConfig::ladder(10, 16, 16, 3, 3).unwrap();
        let mut p = build_model::<f32>(&cfg).unwrap();
        for t in p.tensors_mut() {
            t.data.fill(0.0);
        }
        let imgs = images(3, 16, 16, 3, 1);
        let refs: Vec<_> = imgs.iter().collect();
        assert_eq!(forward(&p, &cfg, &refs).unwrap(), vec![0.0; 3]);
        let n = p.tensors().len();
        p.tensors_mut()[n - 1].data[0] = 2.5;
        assert_eq!(forward(&p, &cfg, &refs).unwrap(), vec![2.5; 3]);
    }

    #[test]
    fn forward_is_per_sample() {
        let cfg = ModelConfig::ladder(18, 20, 20, 3, 9).unwrap();
        let p = build_model::<f32>(&cfg).unwrap();
        let imgs = images(5, 20, 20, 3, 2);
        let all: Vec<_> = imgs.iter().collect();
        let out = forward(&p, &cfg, &all).unwrap();
        assert!(out.iter().all(|v| v.is_finite()));
        let perm = [&imgs[3], &imgs[0], &imgs[4], &imgs[1], &imgs[2]];
        let out_perm = forward(&p, &cfg, &perm).unwrap();
        assert_eq!(out_perm, vec![out[3], out[0], out[4], out[1], out[2]]);
        let dup = forward(&p, &cfg, &[&imgs[2], &imgs[2]]).unwrap();
        assert_eq!(dup, vec![out[2], out[2]]);
        let single = forward(&p, &cfg, &[&imgs[1]]).unwrap();
        assert_eq!(single, vec![out[1]]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let cfg = ModelConfig::ladder(10, 16, 16, 3, 3).unwrap();
        let p = build_model::<f32>(&cfg).unwrap();
        let wrong = images(1, 16, 12, 3, 1);
        assert!(matches!(forward(&p, &cfg, &[&wrong[0]]), Err(NnError::ShapeMismatch(_))));
        let gray = images(1, 16, 16, 1, 1);
        assert!(matches!(forward(&p, &cfg, &[&gray[0]]), Err(NnError::ShapeMismatch(_))));
        assert!(matches!(forward(&p, &cfg, &[]), Err(NnError::EmptyBatch)));
        let other = build_model::<f32>(&ModelConfig::ladder(18, 16, 16, 3, 3).unwrap()).unwrap();
        let ok = images(1, 16, 16, 3, 1);
        assert!(matches!(forward(&other, &cfg, &[&ok[0]]), Err(NnError::ShapeMismatch(_))));
    }

    #[test]
    fn perfect_predictions_zero_the_head_bias_gradient() {
        let cfg = minimal_config();
        let p = build_model::<f64>(&cfg).unwrap();
        let imgs = images(4, cfg.input_width, cfg.input_height, cfg.input_channels, 5);
        let refs: Vec<_> = imgs.iter().collect();
        let net = Network::new(&cfg).unwrap();
        let x = batch_from_images::<f64>(&refs, &cfg).unwrap();
        let preds: Vec<f64> = net.forward_train(&p, &x).unwrap().outputs;
        let (loss, grads, _) = net.loss_and_gradients(&p, &x, &preds).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grads.get("head.bias").unwrap().data, vec![0.0]);
    }

    #[test]
    fn duplicated_sample_doubles_summed_gradient() {
        let cfg = minimal_config();
        let p = build_model::<f64>(&cfg).unwrap();
        let imgs = images(1, cfg.input_width, cfg.input_height, cfg.input_channels, 8);
        let single = backward(&p, &cfg, &[&imgs[0]], &[0.7]).unwrap();
        let double = backward(&p, &cfg, &[&imgs[0], &imgs[0]], &[0.7, 0.7]).unwrap();
        for (a, b) in single.tensors().iter().zip(double.tensors()) {
            for (x, y) in a.data.iter().zip(&b.data) {
                // Undo the 1/M factor to compare summed-loss gradients.
                let (summed_single, summed_double) = (*x, 2.0 * y);
                assert!((summed_double - 2.0 * summed_single).abs() <= 1e-9 * (1.0 + x.abs()), "{}", a.name);
            }
        }
    }
}
