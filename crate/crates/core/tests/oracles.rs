mod common;

use std::collections::BTreeSet;

use common::*;
use funcsense_core::corpus::{ContextMode, Extractor};
use funcsense_core::embeddings::{embed_batch, EmbeddingMatrix, StubProvider};
use funcsense_core::evaluation::{cross_validate, kfold_split, run_experiment, CvConfig, ExperimentSpec};
use funcsense_core::projection::{pca_fit, pca_transform, project, PcaConfig};
use funcsense_core::schema::SenseInventory;
use funcsense_core::Execution;
use ndarray::{array, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn to_matrix(x: &Array2<f64>) -> (EmbeddingMatrix, Vec<String>) {
    let ids: Vec<String> = (0..x.nrows()).map(|i| format!("r{i}")).collect();
    let m = EmbeddingMatrix::new(x.ncols(), ids.clone(), x.iter().map(|&v| v as f32).collect(), serde_json::json!({}))
        .unwrap();
    (m, ids)
}

#[test]
fn shuffled_labels_give_chance_accuracy() {
    let (x, mut y) = blobs(3, 100, 5, 0.5, 3);
    y.shuffle(&mut ChaCha8Rng::seed_from_u64(9));
    let (matrix, ids) = to_matrix(&x);
    let labels: Vec<(String, i64)> = ids.into_iter().zip(y).collect();
    let report = cross_validate(&matrix, &labels, &CvConfig::default()).unwrap();
    let p = 1.0 / 3.0;
    let sigma = (p * (1.0 - p) / 300.0_f64).sqrt();
    assert!((report.accuracy - p).abs() <= 3.0 * sigma, "accuracy {}", report.accuracy);
}

#[test]
fn stratified_folds_on_fixture_frequencies() {
    let gold = gold_335();
    let labels: Vec<i64> = gold.gold_labels().unwrap().iter().map(|(_, c)| *c as i64).collect();
    let folds = kfold_split(labels.len(), 5, 42, Some(&labels)).unwrap();
    for f in 0..5 {
        let ones = folds.test_indices(f).iter().filter(|&&i| labels[i] == 1).count();
        assert!(ones == 32 || ones == 33, "fold {f}: {ones}");
    }
}

#[test]
fn rotation_carries_the_principal_subspace() {
    let mut x = gaussian_matrix(60, 3, 21);
    for (j, s) in [5.0, 2.0, 0.3].iter().enumerate() {
        x.column_mut(j).mapv_inplace(|v| v * s);
    }
    let (a, b) = (0.7f64, 0.4f64);
    let rz = array![[a.cos(), -a.sin(), 0.0], [a.sin(), a.cos(), 0.0], [0.0, 0.0, 1.0]];
    let rx = array![[1.0, 0.0, 0.0], [0.0, b.cos(), -b.sin()], [0.0, b.sin(), b.cos()]];
    let r = rz.dot(&rx);
    let rotated = x.dot(&r.t());
    let cfg = PcaConfig::default();
    let p = pca_fit(x.view(), 2, &cfg).unwrap().components;
    let q = pca_fit(rotated.view(), 2, &cfg).unwrap().components;
    let projector = |c: &Array2<f64>| c.t().dot(c);
    let expected = r.dot(&projector(&p)).dot(&r.t());
    let got = projector(&q);
    for (e, g) in expected.iter().zip(got.iter()) {
        assert!((e - g).abs() < 1e-6, "{e} vs {g}");
    }
}

#[test]
fn reconstruction_error_matches_unexplained_variance() {
    for seed in 0..10 {
        let x = gaussian_matrix(15, 6, 300 + seed);
        let model = pca_fit(x.view(), 3, &PcaConfig::default()).unwrap();
        let z = pca_transform(&model, x.view()).unwrap();
        let mean = ndarray::Array1::from(model.mean.clone());
        let recon = z.dot(&model.components) + &mean;
        let err: f64 = (&x - &recon).iter().map(|v| v * v).sum::<f64>() / 14.0;
        let unexplained = model.total_variance - model.explained_variance.iter().sum::<f64>();
        assert!((err - unexplained).abs() < 1e-6, "seed {seed}: {err} vs {unexplained}");
    }
}

#[test]
fn class_filter_with_refit_changes_coordinates() {
    let gold = gold_335();
    let instances: Vec<_> = gold.items().iter().map(|i| i.instance.clone()).collect();
    let matrix = embed_batch(&StubProvider::new(16, 0), &instances, ContextMode::Phrasal).unwrap();
    let labels: Vec<(String, i64)> = gold.gold_labels().unwrap().iter().map(|(id, c)| (id.to_string(), *c as i64)).collect();
    let cfg = PcaConfig::default();
    let all = project(&matrix, &labels, None, true, &cfg).unwrap();
    let filter: BTreeSet<i64> = (2..=8).collect();
    let refit = project(&matrix, &labels, Some(&filter), true, &cfg).unwrap();
    let kept = project(&matrix, &labels, Some(&filter), false, &cfg).unwrap();
    assert_eq!(all.ids.len(), 335);
    assert_eq!(refit.ids.len(), 335 - 161);
    assert!(!refit.class_ids.contains(&1));
    assert_eq!(refit.ids, kept.ids);
    // without refit, coordinates are the unfiltered ones restricted to the subset
    for (id, c) in kept.ids.iter().zip(&kept.coords) {
        let i = all.ids.iter().position(|x| x == id).unwrap();
        assert_eq!(all.coords[i], *c);
    }
    assert!(refit.coords.iter().zip(&kept.coords).any(|(a, b)| (a[0] - b[0]).abs() > 1e-6));
}

#[test]
fn context_mode_changes_stub_cache() {
    let gold = gold_335();
    let instances: Vec<_> = gold.items().iter().take(20).map(|i| i.instance.clone()).collect();
    let stub = StubProvider::new(8, 0);
    let phrasal = embed_batch(&stub, &instances, ContextMode::Phrasal).unwrap();
    let sentential = embed_batch(&stub, &instances, ContextMode::Sentential).unwrap();
    assert_ne!(phrasal.data(), sentential.data());
    assert_eq!(phrasal.config()["mode"], "phrasal");
    assert_eq!(sentential.config()["mode"], "sentential");
}

#[test]
fn experiments_run_end_to_end_with_stub() {
    let gold = gold_335();
    let inv = SenseInventory::sich();
    let instances: Vec<_> = gold.items().iter().map(|i| i.instance.clone()).collect();
    let matrix = embed_batch(&StubProvider::new(32, 0), &instances, ContextMode::Phrasal).unwrap();
    let cv = CvConfig::default();
    let exp1 = run_experiment(&ExperimentSpec::exp1(), &gold, &inv, &matrix, &cv).unwrap();
    assert_eq!(exp1.n, 335);
    assert_eq!(exp1.classes, (1..=8).collect::<Vec<_>>());
    assert_eq!(exp1.confusion_total(), 335);
    assert_eq!(exp1.baseline_accuracy, 161.0 / 335.0);
    assert_eq!(exp1.fold_sizes.iter().sum::<usize>(), 335);
    assert_eq!(exp1.config["cv"]["folds"], 5);
    let exp2 = run_experiment(&ExperimentSpec::exp2(), &gold, &inv, &matrix, &cv).unwrap();
    assert_eq!(exp2.n, 174);
    assert!(!exp2.classes.contains(&1));
    for spec in ExperimentSpec::exp3_all() {
        let report = run_experiment(&spec, &gold, &inv, &matrix, &cv).unwrap();
        assert_eq!(report.classes, vec![-1, 1], "{}", spec.name);
    }
}

#[test]
fn experiment_reports_identical_across_execution_modes() {
    let gold = gold_335();
    let inv = SenseInventory::sich();
    let instances: Vec<_> = gold.items().iter().map(|i| i.instance.clone()).collect();
    let matrix = embed_batch(&StubProvider::new(16, 1), &instances, ContextMode::Phrasal).unwrap();
    let spec = ExperimentSpec::exp2();
    let cv = CvConfig::default();
    let a = funcsense_core::evaluation::run_experiment_with(&spec, &gold, &inv, &matrix, &cv, Execution::Sequential).unwrap();
    let b = funcsense_core::evaluation::run_experiment_with(&spec, &gold, &inv, &matrix, &cv, Execution::Parallel).unwrap();
    assert_eq!(a, b);
}

#[test]
fn extraction_from_plain_text_corpus() {
    let corpus = "d1\tDie Erde dreht sich, und Paul setzte sich hin.\n\
                  d1\tKeine Treffer hier.\n\
                  d2\tSich zu schämen, (sagt er) lohnt sich nicht!\n";
    let instances = Extractor::new("sich").extract(corpus.as_bytes(), "corpus", None).unwrap();
    let ids: Vec<&str> = instances.iter().map(|i| i.id.as_str()).collect();
    assert_eq!(ids, ["d1:0:3", "d1:0:8", "d2:0:0", "d2:0:9"]);
    let phrase = |i: usize| instances[i].context_tokens(ContextMode::Phrasal).iter().map(|t| t.surface.as_str()).collect::<Vec<_>>().join(" ");
    assert_eq!(phrase(0), "Die Erde dreht sich");
    assert_eq!(phrase(1), "und Paul setzte sich hin");
    assert_eq!(phrase(2), "Sich zu schämen");
    assert_eq!(phrase(3), "lohnt sich nicht");
    let limited = Extractor::new("sich").extract(corpus.as_bytes(), "corpus", Some(1)).unwrap();
    assert_eq!(limited.len(), 1);
}
