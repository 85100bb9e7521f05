use std::hint::black_box;

use adamms_core::embed::BagOfWordsEmbedder;
use adamms_core::search::{adjacent_difference, diff_embedding, diff_exact, sample_subset, select_alpha, CandidateGrid};
use adamms_core::toy::{single_peaked, toy_generate_for, LandscapeParams};
use criterion::{criterion_group, criterion_main, Criterion};

fn selection(c: &mut Criterion) {
    let lab = single_peaked(7, &LandscapeParams { input_count: 1000, ..LandscapeParams::default() });
    let grid = CandidateGrid::default();
    let ids = sample_subset(&lab.spec.input_ids(), 100, 7).unwrap();
    let sets: Vec<_> = grid
        .alphas
        .iter()
        .map(|&a| toy_generate_for(&lab.spec, &lab.params_at(a), &ids).unwrap())
        .collect();

    c.bench_function("toy_generate_100", |b| {
        b.iter(|| toy_generate_for(&lab.spec, &lab.params_at(0.3), black_box(&ids)).unwrap())
    });
    c.bench_function("select_exact_7x100", |b| {
        b.iter(|| {
            let d = adjacent_difference(black_box(&sets), |x, y| diff_exact(x, y).map(|n| n as f64)).unwrap();
            select_alpha(&d.d, &grid).unwrap()
        })
    });
    let embedder = BagOfWordsEmbedder::default();
    c.bench_function("select_embedding_7x100", |b| {
        b.iter(|| {
            let d = adjacent_difference(black_box(&sets), |x, y| diff_embedding(x, y, &embedder)).unwrap();
            select_alpha(&d.d, &grid).unwrap()
        })
    });
    c.bench_function("sample_subset_100_of_10000", |b| {
        let all: Vec<String> = (0..10_000).map(|i| format!("i{i}")).collect();
        b.iter(|| sample_subset(black_box(&all), 100, 3).unwrap())
    });
}

criterion_group!(benches, selection);
criterion_main!(benches);
