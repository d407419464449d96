//! Rendering and preprocessing cost per frame.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use visionlink::render::{DEFAULT_RENDER_HEIGHT, DEFAULT_RENDER_WIDTH};
use visionlink::vision::{process_image, resize};
use visionlink::{Renderer, VisionConfig, VisionMode};
use visionlink_bench::{snapshots, street};

fn render(c: &mut Criterion) {
    let cfg = street(2.0);
    let snaps = snapshots(&cfg);
    let renderer = Renderer::new(&cfg);
    c.bench_function("render_frame", |b| {
        let mut k = 0;
        b.iter(|| {
            k = (k + 1) % snaps.len();
            black_box(renderer.render(&snaps[k], DEFAULT_RENDER_WIDTH, DEFAULT_RENDER_HEIGHT))
        })
    });
    let (image, annotations) = renderer.render(&snaps[0], DEFAULT_RENDER_WIDTH, DEFAULT_RENDER_HEIGHT);
    for mode in VisionMode::ALL {
        let vision = VisionConfig::new(mode, false);
        c.bench_function(&format!("preprocess_{}", mode.name()), |b| {
            b.iter(|| black_box(resize(&process_image(&image, &annotations, &vision, 0).tensor, 64, 64)))
        });
    }
}

criterion_group!(benches, render);
criterion_main!(benches);
