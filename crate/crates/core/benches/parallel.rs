use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use funcsense_core::corpus::{ContextMode, DelimiterSet, Instance, Sentence};
use funcsense_core::embeddings::{embed_batch_with, EmbeddingMatrix, StubProvider};
use funcsense_core::evaluation::{cross_validate_with, CvConfig};
use funcsense_core::linear_model::{train_multiclass_with, TrainConfig};
use funcsense_core::projection::{pca_fit_with, PcaConfig};
use funcsense_core::Execution;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn dataset(n: usize, dim: usize, classes: usize) -> (Array2<f64>, Vec<i64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal) * 0.2).collect())
        .collect();
    let labels: Vec<i64> = (0..n).map(|i| (i % classes) as i64 + 1).collect();
    let x = Array2::from_shape_fn((n, dim), |(i, j)| centers[i % classes][j] + rng.sample::<f64, _>(StandardNormal));
    (x, labels)
}

fn instances(n: usize) -> Vec<Instance> {
    (0..n)
        .map(|i| {
            let words = format!("Die Erde dreht sich am Tag {i} , sagt Paul .");
            let tokens: Vec<&str> = words.split(' ').collect();
            let sentence = Arc::new(Sentence::from_surfaces(format!("b{i}"), 0, &tokens).unwrap());
            let span = funcsense_core::corpus::phrasal_span(&sentence, 3, &DelimiterSet::default()).unwrap();
            Instance::new(sentence, 3, span).unwrap()
        })
        .collect()
}

fn bench_training(c: &mut Criterion) {
    let (x, y) = dataset(335, 768, 8);
    let cfg = TrainConfig::default();
    let mut group = c.benchmark_group("ovr_train_335x768_8class");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| train_multiclass_with(x.view(), &y, &cfg, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_cross_validation(c: &mut Criterion) {
    let (x, y) = dataset(335, 768, 8);
    let ids: Vec<String> = (0..x.nrows()).map(|i| format!("r{i}")).collect();
    let matrix = EmbeddingMatrix::new(768, ids.clone(), x.iter().map(|&v| v as f32).collect(), serde_json::json!({})).unwrap();
    let labels: Vec<(String, i64)> = ids.into_iter().zip(y).collect();
    let cv = CvConfig::default();
    let mut group = c.benchmark_group("cv5_335x768_8class");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| cross_validate_with(&matrix, &labels, &cv, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_embedding(c: &mut Criterion) {
    let batch = instances(335);
    let stub = StubProvider::new(768, 0);
    let mut group = c.benchmark_group("stub_embed_batch_335x768");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| embed_batch_with(&stub, &batch, ContextMode::Phrasal, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_pca(c: &mut Criterion) {
    let (x, _) = dataset(335, 768, 8);
    let cfg = PcaConfig::default();
    let mut group = c.benchmark_group("pca_top2_335x768");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pca_fit_with(x.view(), 2, &cfg, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_training, bench_cross_validation, bench_embedding, bench_pca);
criterion_main!(benches);
