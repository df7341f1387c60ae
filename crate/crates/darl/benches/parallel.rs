//! Benchmarks for the data-parallel hot paths: Monte-Carlo rollouts, batch
//! NLL gradients, and corpus evaluation. Each id is tagged with the active
//! execution mode, so running
//!
//!     cargo bench --bench parallel
//!     cargo bench --bench parallel --no-default-features
//!
//! produces side-by-side `<group>/parallel` and `<group>/sequential` entries
//! in the same criterion report.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use darl::corpus::{build_world, Sequence, WorldConfig};
use darl::discriminator::{DiscriminatorModel, DEFAULT_TEMPERATURE};
use darl::generator::{GeneratorParams, Sampled};
use darl::metrics;
use darl::numerics::Rng;
use darl::rollout;

const MODE: &str = if cfg!(feature = "parallel") { "parallel" } else { "sequential" };

fn bench_rollouts(c: &mut Criterion) {
    let params = GeneratorParams::init(7, 40, 24, 32).unwrap();
    let disc = DiscriminatorModel::init(8, 40, 16, DEFAULT_TEMPERATURE).unwrap();
    let mut rng = Rng::new(9);
    let sampled: Sampled = params.sample_sequence(12, &mut rng).unwrap();
    c.bench_with_input(
        BenchmarkId::new("q_for_sequence_n16", MODE),
        &sampled,
        |b, s| {
            b.iter(|| {
                let mut r = Rng::new(11);
                black_box(rollout::q_for_sequence(&params, &disc, s, 16, 12, &mut r).unwrap())
            })
        },
    );
}

fn bench_batch_grad(c: &mut Criterion) {
    let params = GeneratorParams::init(21, 40, 24, 32).unwrap();
    let mut rng = Rng::new(22);
    let batch: Vec<Sequence> = (0..16)
        .map(|_| {
            let len = 6 + rng.below(6);
            Sequence::from_ids((0..len).map(|_| 3 + rng.below(37) as u32).collect())
        })
        .collect();
    c.bench_with_input(BenchmarkId::new("nll_grad_batch16", MODE), &batch, |b, batch| {
        b.iter(|| black_box(params.nll_grad(batch).unwrap()))
    });
}

fn bench_evaluate(c: &mut Criterion) {
    let world = build_world(&WorldConfig {
        seed: 31,
        n_source_domains: 3,
        k: 5,
        sentences_per_domain: 300,
        min_len: 4,
        max_len: 10,
    })
    .unwrap();
    let union = world.source_union();
    let mut rng = Rng::new(32);
    let texts: Vec<Sequence> =
        (0..64).map(|_| union[rng.below(union.len())].clone()).collect();
    let mut group = c.benchmark_group("evaluate_64_texts");
    group.sample_size(20);
    group.bench_with_input(BenchmarkId::new("metrics", MODE), &texts, |b, texts| {
        b.iter(|| black_box(metrics::evaluate(texts, &world, &world.support, &union).unwrap()))
    });
    group.finish();
}

criterion_group!(benches, bench_rollouts, bench_batch_grad, bench_evaluate);
criterion_main!(benches);
