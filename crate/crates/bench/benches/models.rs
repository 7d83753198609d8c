use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use hsdssa::backbone::{build_model, BackboneConfig, HsSettings, Variant};
use hsdssa_bench::seeded_tensor;

fn embed_config(variant: Variant, dssa: bool) -> BackboneConfig {
    let mut cfg = BackboneConfig::new(variant);
    cfg.initial_channels = 16;
    cfg.feature_dim = 16;
    cfg.embedding_dim = 32;
    if variant == Variant::HsResnet50 {
        cfg.hs = Some(HsSettings {
            s: 8,
            t: 1.5,
            kernel: 3,
        });
    }
    if dssa {
        cfg.dssa_after_stage = Some(3);
    }
    cfg
}

fn bench_embed(c: &mut Criterion) {
    let mut group = c.benchmark_group("embed_64x16");
    group.sample_size(20);
    let cases = [
        ("resnet34", embed_config(Variant::Resnet34, false)),
        ("resnet50", embed_config(Variant::Resnet50, false)),
        ("resnet50+dssa", embed_config(Variant::Resnet50, true)),
        ("hs_resnet50", embed_config(Variant::HsResnet50, false)),
        ("hs_resnet50+dssa", embed_config(Variant::HsResnet50, true)),
    ];
    let features = seeded_tensor(vec![64, 16], 11);
    for (name, cfg) in cases {
        let model = build_model(&cfg, 0).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(name), &(), |bench, _| {
            bench.iter(|| black_box(model.embed(&features).unwrap()));
        });
    }
    group.finish();
}

criterion_group!(benches, bench_embed);
criterion_main!(benches);
