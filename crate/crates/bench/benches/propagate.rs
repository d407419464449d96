//! Scenario simulation and channel labelling cost.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use visionlink::channel::{received_power_db, rms_delay_spread, PowerMode};
use visionlink::scene::{label_snapshot, propagate};
use visionlink_bench::{snapshots, street};

fn propagate_bench(c: &mut Criterion) {
    let cfg = street(10.0);
    let snaps = snapshots(&cfg);
    c.bench_function("generate_scenario_10s", |b| b.iter(|| black_box(snapshots(&cfg))));
    c.bench_function("propagate_80_snapshots", |b| {
        b.iter(|| {
            for s in &snaps {
                let cir = propagate(s, &cfg).unwrap();
                black_box((received_power_db(&cir, PowerMode::Coherent, 0.0), rms_delay_spread(&cir).unwrap()));
            }
        })
    });
    c.bench_function("label_80_snapshots", |b| {
        b.iter(|| snaps.iter().map(|s| label_snapshot(s, &cfg).unwrap().received_power_db).sum::<f64>())
    });
}

criterion_group!(benches, propagate_bench);
criterion_main!(benches);
