//! Forward and training-step cost of the ladder networks on 64x64 inputs.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use visionlink::nn::{build_model, forward, loss_and_gradients, LADDER_DEPTHS};
use visionlink::{ImageTensor, ModelConfig};
use visionlink_bench::noise_images;

fn network(c: &mut Criterion) {
    let images = noise_images(64, 64, 64, 3);
    let refs: Vec<&ImageTensor> = images.iter().collect();
    let labels: Vec<f64> = (0..refs.len()).map(|i| (i as f64 * 0.37).sin()).collect();
    let mut group = c.benchmark_group("network_batch64");
    group.sample_size(10);
    for depth in LADDER_DEPTHS {
        let cfg = ModelConfig::ladder(depth, 64, 64, 3, 0).unwrap();
        let params = build_model::<f32>(&cfg).unwrap();
        group.bench_with_input(BenchmarkId::new("forward", depth), &depth, |b, _| {
            b.iter(|| black_box(forward(&params, &cfg, &refs).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("loss_and_gradients", depth), &depth, |b, _| {
            b.iter(|| black_box(loss_and_gradients(&params, &cfg, &refs, &labels).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, network);
criterion_main!(benches);
