use std::hint::black_box;

use axpir_bench::{scenarios, topologies};
use axpir_core::audit::{audit_privacy, correctness_exhaustive, security_rank};
use axpir_core::galois::{FMatrix, Field};
use axpir_core::protocol::{run_session, Scenario};
use axpir_core::schemes::encode_reduced_n4k2;
use axpir_core::topology::{solve_grouping, ServerSet};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grouping(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_grouping");
    for (name, cm) in topologies() {
        group.bench_function(name, |b| b.iter(|| solve_grouping(black_box(&cm)).unwrap()));
    }
    group.finish();
}

fn sessions(c: &mut Criterion) {
    let mut group = c.benchmark_group("run_session");
    for (name, sc) in scenarios() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        group.bench_function(name, |b| {
            b.iter_batched(
                || sc.random_inputs(&mut rng),
                |(m, z)| run_session(&sc, 0, &m, &z, 5).unwrap(),
                BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

fn linear_algebra(c: &mut Criterion) {
    let f = Field::new(65521).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let rows: Vec<Vec<u64>> = (0..64).map(|_| (0..64).map(|_| rng.gen_range(0..f.q())).collect()).collect();
    let m = FMatrix::from_rows(f, &rows).unwrap();
    c.bench_function("rank_64x64_q65521", |b| b.iter(|| black_box(&m).rank()));
}

fn audits(c: &mut Criterion) {
    let mut group = c.benchmark_group("audit");
    group.sample_size(10);
    let sc = Scenario::reduced_example(Field::binary());
    group.bench_function("correctness_exhaustive_reduced", |b| {
        b.iter(|| correctness_exhaustive(sc.scheme()).unwrap())
    });
    let grouped = Scenario::grouped_example(Field::binary(), 2);
    group.bench_function("privacy_exhaustive_grouped", |b| {
        b.iter(|| audit_privacy(&grouped, ServerSet::singleton(0), None).unwrap())
    });
    let layout = encode_reduced_n4k2(Field::binary());
    group.bench_function("security_rank_reduced", |b| {
        b.iter(|| security_rank(&layout, ServerSet::from_indices([0, 1])))
    });
    group.finish();
}

criterion_group!(benches, grouping, sessions, linear_algebra, audits);
criterion_main!(benches);
