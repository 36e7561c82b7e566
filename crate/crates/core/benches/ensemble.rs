use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nonholo::experiments::{ensemble_members, preset};
use nonholo::parallel::Execution;

fn ensemble_schedules(c: &mut Criterion) {
    let mut group = c.benchmark_group("ensemble");
    group.sample_size(10);
    for count in [16, 64] {
        let mut cfg = preset("ensemble").unwrap();
        let ens = cfg.ensemble.as_mut().unwrap();
        ens.count = count;
        ens.snapshot_times = vec![0.0, 5.0, 10.0];
        for (label, execution) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
            group.bench_with_input(BenchmarkId::new(label, count), &cfg, |b, cfg| {
                b.iter(|| black_box(ensemble_members(cfg, execution).unwrap()))
            });
        }
    }
    group.finish();
}

fn single_execution(c: &mut Criterion) {
    let cfg = preset("elastic-ellipse").unwrap();
    let system = nonholo::engine::PennySystem::new(cfg.params, cfg.table).unwrap();
    let s0 = cfg.initial_state();
    c.bench_function("elastic-ellipse 20 impacts", |b| {
        b.iter(|| black_box(system.simulate(&s0, &cfg.engine).unwrap()))
    });
}

criterion_group!(benches, ensemble_schedules, single_execution);
criterion_main!(benches);
