use criterion::{criterion_group, criterion_main, Criterion};
use most_core::harness::compare::{compare, Sweep};
use most_core::harness::ExperimentConfig;

fn base() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.set("workload.phases", "[{ start_s = 0.0, workers = 64 }]").unwrap();
    cfg.engine.duration_s = 2.0;
    cfg.engine.metrics_interval_s = 0.2;
    cfg
}

fn sweep(c: &mut Criterion) {
    let cfg = base();
    let sweeps = vec!["policy=most,hemem,striping,colloid".parse::<Sweep>().unwrap()];
    let mut group = c.benchmark_group("four_policy_sweep");
    group.sample_size(10);
    group.bench_function("rayon", |b| b.iter(|| compare(&cfg, &sweeps, true).unwrap()));
    group.bench_function("sequential", |b| b.iter(|| compare(&cfg, &sweeps, false).unwrap()));
    group.finish();
}

criterion_group!(benches, sweep);
criterion_main!(benches);
