use std::hint::black_box;

use adamms_bench::synthetic_triplet;
use adamms_core::mapping::resolve_mapping;
use adamms_core::merge::{run_recipe_with, MergeRecipe, RunOptions, Strategy};
use adamms_core::store::{Checkpoint, Dtype};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

fn strategies(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    let [base, donor, pivot] = synthetic_triplet(dir.path(), 16, 256, Dtype::BF16);
    let (b, d) = (Checkpoint::open(&base).unwrap(), Checkpoint::open(&donor).unwrap());
    let mapping = resolve_mapping(b.manifest(), d.manifest(), &[]).unwrap();
    let out = dir.path().join("out.safetensors");

    let mut group = c.benchmark_group("run_recipe");
    group.throughput(Throughput::Elements(b.manifest().total_elements()));
    group.sample_size(20);
    for strategy in [
        Strategy::LinearInterpolation,
        Strategy::TaskArithmetic,
        Strategy::Ties,
        Strategy::DareTies,
        Strategy::Metagpt,
    ] {
        let recipe = MergeRecipe::with_pivot(strategy, 0.3, &pivot);
        group.bench_with_input(BenchmarkId::from_parameter(format!("{strategy:?}")), &recipe, |bench, recipe| {
            bench.iter(|| run_recipe_with(recipe, &b, &d, &mapping, &out, &RunOptions::default()).unwrap())
        });
    }
    group.finish();

    let mut group = c.benchmark_group("linear_threads");
    group.sample_size(20);
    for threads in [1, 2, 4, 8] {
        group.bench_with_input(BenchmarkId::from_parameter(threads), &threads, |bench, &threads| {
            bench.iter(|| {
                run_recipe_with(&MergeRecipe::linear(0.3), &b, &d, &mapping, &out, &RunOptions { threads })
                    .map(|o| black_box(o.stats.peak_payload_bytes))
                    .unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, strategies);
criterion_main!(benches);
