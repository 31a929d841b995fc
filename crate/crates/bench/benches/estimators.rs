use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use dashaff::{EstimatorConfig, ThroughputSample};
use std::hint::black_box;

fn samples(n: usize) -> Vec<ThroughputSample> {
    // deterministic sawtooth with a step, enough to move λ around
    (0..n)
        .map(|i| {
            let base = if (i / 50) % 2 == 0 { 2000.0 } else { 600.0 };
            ThroughputSample::new(base + (i % 7) as f64 * 35.0, i as u64 + 1).unwrap()
        })
        .collect()
}

fn updates(c: &mut Criterion) {
    let xs = samples(10_000);
    let mut group = c.benchmark_group("estimator_update");
    group.throughput(Throughput::Elements(xs.len() as u64));
    for cfg in EstimatorConfig::all_defaults() {
        group.bench_with_input(BenchmarkId::from_parameter(cfg.label()), &xs, |b, xs| {
            b.iter(|| {
                let mut est = cfg.build().unwrap();
                for s in xs {
                    black_box(est.update(*s).unwrap());
                }
            })
        });
    }
    group.finish();
}

criterion_group!(benches, updates);
criterion_main!(benches);
