use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use varoc::exec::Execution;
use varoc::kepler::KeplerParams;
use varoc::ocp::ResidualSystem;
use varoc::residual::Formulation;
use varoc::solver::{fd_jacobian, fd_jacobian_banded, initial_guess, BandedLayout, GuessStrategy, NonlinearSystem};
use varoc::SchemeParams;

fn jacobians(c: &mut Criterion) {
    let kp = KeplerParams::default();
    let prob = kp.problem(28.0).unwrap();
    let mut group = c.benchmark_group("fd_jacobian");
    group.sample_size(20);
    for n in [70, 280] {
        let p = SchemeParams::new(0.5, 0.5, 0.5, n, 28.0).unwrap();
        let sys = ResidualSystem::new(&prob, p, Formulation::Dependent);
        let x = sys.layout.pack(&initial_guess(&prob, &p, Formulation::Dependent, GuessStrategy::ZeroCostate));
        let f0 = sys.eval(&x);
        let structure = sys.block_structure().unwrap().clone();
        let layout = BandedLayout::new(&structure);
        for exec in [Execution::Sequential, Execution::Parallel] {
            group.bench_with_input(BenchmarkId::new(format!("banded/{exec:?}"), n), &exec, |b, &exec| {
                b.iter(|| fd_jacobian_banded(&sys, &structure, &layout, black_box(&x), &f0, 1e-7, exec).unwrap())
            });
        }
        if n == 70 {
            for exec in [Execution::Sequential, Execution::Parallel] {
                group.bench_with_input(BenchmarkId::new(format!("dense/{exec:?}"), n), &exec, |b, &exec| {
                    b.iter(|| fd_jacobian(&sys, black_box(&x), 1e-7, exec).unwrap())
                });
            }
        }
    }
    group.finish();
}

criterion_group!(benches, jacobians);
criterion_main!(benches);
