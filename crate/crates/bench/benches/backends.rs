use std::time::{Duration, Instant};

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use tpp_core::workflow::{Deployment, WorkflowConfig};
use tpp_core::{BackendId, SignedBatch};

/// Emits fresh batches untimed, then times `f` over them.
fn timed(d: &mut Deployment, seed: &mut u64, iters: u64, f: impl Fn(&mut Deployment, &SignedBatch)) -> Duration {
    let batches: Vec<_> = (0..iters)
        .map(|_| {
            *seed += 1;
            d.emit(*seed).unwrap()
        })
        .collect();
    let start = Instant::now();
    for s in &batches {
        f(d, s);
    }
    start.elapsed()
}

/// Gateway processing plus on-chain verification of one batch, by batch size.
fn batch_size(c: &mut Criterion) {
    for backend in BackendId::ALL {
        let mut group = c.benchmark_group(format!("{backend}/size"));
        for size in [1usize, 4, 16, 32] {
            let mut d = Deployment::setup(WorkflowConfig::new(backend, size), 1).unwrap();
            let mut seed = 0;
            group.throughput(Throughput::Elements(4 * size as u64));
            group.bench_function(BenchmarkId::from_parameter(size), |b| {
                b.iter_custom(|iters| {
                    timed(&mut d, &mut seed, iters, |d, s| assert!(d.run_batch(s).unwrap().accepted))
                })
            });
        }
        group.finish();
    }
}

/// Cost of the evidence step alone, without chain submission.
fn evidence_only(c: &mut Criterion) {
    let mut group = c.benchmark_group("evidence");
    for backend in BackendId::ALL {
        let mut d = Deployment::setup(WorkflowConfig::new(backend, 8), 2).unwrap();
        let mut seed = 0;
        group.bench_function(BenchmarkId::new(backend.to_string(), 8), |b| {
            b.iter_custom(|iters| {
                timed(&mut d, &mut seed, iters, |d, s| {
                    d.process(s).unwrap();
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, batch_size, evidence_only);
criterion_main!(benches);
