use std::hint::black_box;

use cgpo_core::confidence::{calibrate_threshold, segment_steps};
use cgpo_core::model::{ModelConfig, PackedBatch, Transformer};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};

fn model() -> Transformer<f32> {
    Transformer::init(&ModelConfig {
        n_layers: 2,
        n_heads: 4,
        d_model: 64,
        d_ff: 256,
        context_len: 96,
        seed: 1,
        ..ModelConfig::default()
    })
    .unwrap()
}

fn forward_backward(c: &mut Criterion) {
    let m = model();
    let mut batch = PackedBatch::default();
    for i in 0..32u32 {
        let seq: Vec<u32> = (0..48).map(|t| 4 + (i * 7 + t) % 19).collect();
        batch.push(&seq, 12);
    }
    c.bench_function("forward 32x48", |b| b.iter(|| m.forward(black_box(&batch)).unwrap()));
    let fwd = m.forward(&batch).unwrap();
    let coeffs = vec![-1.0 / fwd.logprobs.len() as f64; fwd.logprobs.len()];
    c.bench_function("backward 32x48", |b| b.iter(|| m.backward(&batch, &fwd, black_box(&coeffs))));
}

fn decode(c: &mut Criterion) {
    let m = model();
    c.bench_function("decode 48 tokens", |b| {
        b.iter(|| {
            let mut cache = m.new_cache();
            for t in 0..48u32 {
                black_box(m.step(&mut cache, 4 + t % 19).unwrap());
            }
        })
    });
}

fn thresholds(c: &mut Criterion) {
    let mut rng = rand::rngs::StdRng::seed_from_u64(3);
    let mut group = c.benchmark_group("confidence");
    for n in [1_000usize, 100_000] {
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(1e-6..=1.0)).collect();
        group.bench_with_input(BenchmarkId::new("quantile", n), &values, |b, v| {
            b.iter(|| calibrate_threshold(black_box(v), 0.02).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("segment", n), &values, |b, v| {
            b.iter(|| segment_steps(black_box(v), 0.05))
        });
    }
    group.finish();
}

criterion_group!(benches, forward_backward, decode, thresholds);
criterion_main!(benches);
