use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use hsdssa::attention::DSSAConfig;
use hsdssa::hs_block::HSBlockConfig;
use hsdssa_bench::seeded_tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bench_matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for n in [16usize, 64, 128] {
        let a = seeded_tensor(vec![n, n], 1);
        let b = seeded_tensor(vec![n, n], 2);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| black_box(a.matmul(&b).unwrap()));
        });
    }
    group.finish();
}

fn bench_conv2d(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d_3x3");
    for ch in [8usize, 32] {
        let x = seeded_tensor(vec![ch, 32, 16], 3);
        let w = seeded_tensor(vec![ch, ch, 3, 3], 4);
        group.bench_with_input(BenchmarkId::from_parameter(ch), &ch, |bench, _| {
            bench.iter(|| black_box(x.conv2d(&w, 1, (1, 1)).unwrap()));
        });
    }
    group.finish();
}

fn bench_softmax(c: &mut Criterion) {
    let x = seeded_tensor(vec![128, 128], 5);
    c.bench_function("softmax_rows_128x128", |bench| {
        bench.iter(|| black_box(x.softmax_rows().unwrap()));
    });
}

fn bench_hs_forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("hs_forward");
    for (s, t) in [(4usize, 2.0f64), (8, 1.5)] {
        let w = 64usize;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cfg = HSBlockConfig::new(w, t, s, 3)
            .unwrap()
            .with_seeded_weights(&mut rng)
            .unwrap();
        let x = seeded_tensor(vec![cfg.io_channels(), 16, 8], 7);
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("s{s}_t{t}")),
            &s,
            |bench, _| {
                bench.iter(|| black_box(cfg.forward(&x).unwrap()));
            },
        );
    }
    group.finish();
}

fn bench_dssa(c: &mut Criterion) {
    let mut group = c.benchmark_group("dssa_forward");
    for topk in [None, Some(8usize)] {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = DSSAConfig::seeded(32, 8, 1, topk, &mut rng).unwrap();
        let x = seeded_tensor(vec![32, 32, 8], 9);
        let label = match topk {
            None => "dense".to_string(),
            Some(k) => format!("top{k}"),
        };
        group.bench_with_input(BenchmarkId::from_parameter(label), &topk, |bench, _| {
            bench.iter(|| black_box(cfg.forward(&x).unwrap()));
        });
    }
    group.finish();
}

criterion_group!(
    benches,
    bench_matmul,
    bench_conv2d,
    bench_softmax,
    bench_hs_forward,
    bench_dssa
);
criterion_main!(benches);
