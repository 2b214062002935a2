use codistillery_bench::experiment;
use codistillery_core::harness::run_experiment;
use codistillery_core::sync::SyncKind;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn strategies(c: &mut Criterion) {
    let mut g = c.benchmark_group("train_50_iterations");
    g.sample_size(10);
    for (name, kind) in [
        ("all_reduce", SyncKind::AllReduce),
        ("predictions", SyncKind::CodistillPredictions),
        ("checkpoints", SyncKind::CodistillCheckpoints),
    ] {
        let cfg = experiment(kind, 50);
        g.bench_with_input(BenchmarkId::from_parameter(name), &cfg, |bench, cfg| {
            bench.iter(|| run_experiment(cfg).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, strategies);
criterion_main!(benches);
