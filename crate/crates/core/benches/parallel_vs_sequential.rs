//! One worker against the full pool on the hot data-parallel paths. Build
//! with `--no-default-features` to time the purely sequential code path.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use spoofbench::corpus::{generate_corpus, CorpusConfig};
use spoofbench::features::{extract_drebin, FeatureDictionary, FeatureMatrix};
use spoofbench::models::{knn_all, train, Dataset, ModelConfig, ModelKind};
use spoofbench::par;

fn pools() -> Vec<usize> {
    let n = par::default_workers();
    if n > 1 { vec![1, n] } else { vec![1] }
}

fn drebin_dataset(n: usize) -> Dataset {
    let corpus = generate_corpus(&CorpusConfig { n_benign: n / 2, n_malicious: n / 2, seed: 3, ..Default::default() }).unwrap();
    let sets: Vec<_> = corpus.apps.iter().map(|a| extract_drebin(a).unwrap()).collect();
    let dict = FeatureDictionary::build(&sets).unwrap();
    let x = FeatureMatrix::Sparse { dim: dict.len(), rows: sets.iter().map(|s| dict.vectorize(s)).collect() };
    let y = corpus.apps.iter().map(|a| a.true_label.as_u8()).collect();
    let ids = corpus.apps.iter().map(|a| a.id.clone()).collect();
    Dataset::new(x, y, ids).unwrap()
}

fn corpus_generation(c: &mut Criterion) {
    let mut g = c.benchmark_group("generate_corpus_200");
    g.sample_size(10);
    let cfg = CorpusConfig { n_benign: 100, n_malicious: 100, seed: 1, ..Default::default() };
    for w in pools() {
        g.bench_with_input(BenchmarkId::from_parameter(w), &w, |b, &w| {
            b.iter(|| par::with_workers(w, || black_box(generate_corpus(&cfg).unwrap())))
        });
    }
    g.finish();
}

fn knn(c: &mut Criterion) {
    let ds = drebin_dataset(500);
    let mut g = c.benchmark_group("knn_all_500");
    g.sample_size(10);
    for w in pools() {
        g.bench_with_input(BenchmarkId::from_parameter(w), &w, |b, &w| {
            b.iter(|| par::with_workers(w, || black_box(knn_all(&ds.x, 11).unwrap())))
        });
    }
    g.finish();
}

fn forest(c: &mut Criterion) {
    let ds = drebin_dataset(400);
    let mut cfg = ModelConfig::new(ModelKind::Rf, 5);
    cfg.rf.trees = 50;
    let mut g = c.benchmark_group("random_forest_50_trees");
    g.sample_size(10);
    for w in pools() {
        g.bench_with_input(BenchmarkId::from_parameter(w), &w, |b, &w| {
            b.iter(|| par::with_workers(w, || black_box(train(&cfg, &ds).unwrap())))
        });
    }
    g.finish();
}

criterion_group!(benches, corpus_generation, knn, forest);
criterion_main!(benches);
