//! Replica-sweep throughput: the rayon fan-out against the sequential
//! reference on a small batch of common-random-number replicas.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use gridem::controller::ControllerConfig;
use gridem::feeder::{builtin_sce56_with, sce56_bus3_override};
use gridem::runner::{run_jobs, run_jobs_sequential, Job};
use gridem::scenario::{gen_synthetic, SyntheticConfig};
use gridem::subproblem::GridModel;

fn jobs(n_replicas: u64, n_slots: usize) -> (gridem::FeederTree, Vec<Job>) {
    let tree = builtin_sce56_with(&[sce56_bus3_override()]).unwrap();
    let jobs = (0..n_replicas)
        .map(|k| {
            let cfg = SyntheticConfig {
                n_slots,
                seed: k,
                ..SyntheticConfig::default()
            };
            let slots = gen_synthetic(&tree, &cfg).unwrap();
            Job::new(
                format!("replica-{k}"),
                ControllerConfig {
                    model: GridModel::Ldf,
                    ..ControllerConfig::default()
                },
                slots,
            )
        })
        .collect();
    (tree, jobs)
}

fn replica_sweep(c: &mut Criterion) {
    let (tree, batch) = jobs(8, 4);
    let mut group = c.benchmark_group("replica_sweep");
    group.sample_size(10);
    group.bench_function("parallel", |b| {
        b.iter(|| black_box(run_jobs(&tree, black_box(&batch))))
    });
    group.bench_function("sequential", |b| {
        b.iter(|| black_box(run_jobs_sequential(&tree, black_box(&batch))))
    });
    group.finish();
}

criterion_group!(benches, replica_sweep);
criterion_main!(benches);
