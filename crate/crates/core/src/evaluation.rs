//! k-fold cross-validation, accuracy/baseline/confusion reporting and the
//! three classification experiments (all classes, without class 1, and
//! per-feature binary prediction).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::GoldDataset;
use crate::embeddings::EmbeddingMatrix;
use crate::error::{list_ids, Error, Result};
use crate::exec::Execution;
use crate::linear_model::{train_multiclass_with, TrainConfig};
use crate::schema::{FeatureName, SenseInventory};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    pub stratified: bool,
    pub fold_of: Vec<usize>,
}

impl FoldAssignment {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.fold_of[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.fold_of[i] != fold).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Deterministic balanced folds. Without stratification the indices are
/// shuffled and dealt round-robin. With stratification each class (ascending
/// label order) is shuffled and the classes are dealt one after another,
/// continuing the round-robin, so every class is spread within one instance
/// of even across folds and fold sizes still differ by at most one.
pub fn kfold_split(n: usize, k: usize, seed: u64, stratify_labels: Option<&[i64]>) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::domain(format!("need at least 2 folds, got {k}")));
    }
    if n < k {
        return Err(Error::domain(format!("cannot split {n} instances into {k} folds")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order: Vec<usize> = match stratify_labels {
        None => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            idx
        }
        Some(labels) => {
            if labels.len() != n {
                return Err(Error::domain(format!("{} stratification labels for {n} instances", labels.len())));
            }
            let mut by_class: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
            for (i, &l) in labels.iter().enumerate() {
                by_class.entry(l).or_default().push(i);
            }
            let mut order = Vec::with_capacity(n);
            for members in by_class.values_mut() {
                members.shuffle(&mut rng);
                order.extend_from_slice(members);
            }
            order
        }
    };
    let mut fold_of = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % k;
    }
    Ok(FoldAssignment {
        n,
        k,
        seed,
        stratified: stratify_labels.is_some(),
        fold_of,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub folds: usize,
    pub seed: u64,
    pub stratified: bool,
    pub train: TrainConfig,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: 5,
            seed: 42,
            stratified: false,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub gold: i64,
    pub predicted: i64,
    pub fold: usize,
    pub margins: BTreeMap<i64, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub experiment: String,
    pub n: usize,
    pub classes: Vec<i64>,
    /// Pooled over all held-out predictions.
    pub accuracy: f64,
    pub baseline_accuracy: f64,
    /// Rows: actual class, columns: predicted class, both in `classes` order.
    pub confusion: Vec<Vec<u64>>,
    pub fold_sizes: Vec<usize>,
    pub predictions: Vec<PredictionRecord>,
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn confusion_total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.classes.len()).map(|i| self.confusion[i][i]).sum()
    }

    /// Human-readable summary: accuracy, baseline and the confusion table.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "experiment: {}", self.experiment);
        let _ = writeln!(out, "instances:  {}", self.n);
        let _ = writeln!(out, "accuracy:   {:.1}%", 100.0 * self.accuracy);
        let _ = writeln!(out, "baseline:   {:.1}%", 100.0 * self.baseline_accuracy);
        out.push_str(&render_table("actual \\ predicted", &self.classes, &self.confusion));
        out
    }
}

fn render_table(corner: &str, classes: &[i64], counts: &[Vec<u64>]) -> String {
    let width = corner.len().max(8);
    let mut out = format!("{corner:>width$} |");
    for c in classes {
        let _ = write!(out, "{c:>6}");
    }
    out.push('\n');
    out.push_str(&"-".repeat(width + 2 + 6 * classes.len()));
    out.push('\n');
    for (c, row) in classes.iter().zip(counts) {
        let _ = write!(out, "{c:>width$} |");
        for v in row {
            let _ = write!(out, "{v:>6}");
        }
        out.push('\n');
    }
    out
}

/// Share of the most frequent label.
pub fn most_frequent_class_baseline(labels: &[i64]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::domain("baseline of an empty label set"));
    }
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0) += 1;
    }
    Ok(*counts.values().max().unwrap() as f64 / labels.len() as f64)
}

/// Collapses a confusion matrix to `focus` vs. everything else:
/// `[[focus->focus, focus->other], [other->focus, other->other]]`.
pub fn aggregate_confusion(classes: &[i64], confusion: &[Vec<u64>], focus: i64) -> Result<[[u64; 2]; 2]> {
    let f = classes
        .iter()
        .position(|&c| c == focus)
        .ok_or_else(|| Error::domain(format!("class {focus} not in confusion matrix")))?;
    if confusion.len() != classes.len() || confusion.iter().any(|r| r.len() != classes.len()) {
        return Err(Error::domain("confusion matrix shape does not match class list"));
    }
    let mut out = [[0u64; 2]; 2];
    for (i, row) in confusion.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            out[usize::from(i != f)][usize::from(j != f)] += v;
        }
    }
    Ok(out)
}

pub fn render_aggregate(focus: i64, agg: &[[u64; 2]; 2]) -> String {
    format!(
        "{:>16} | {:>9} {:>9}\n{}\n{:>16} | {:>9} {:>9}\n{:>16} | {:>9} {:>9}\n",
        "actual \\ pred",
        format!("class {focus}"),
        "other",
        "-".repeat(38),
        format!("class {focus}"),
        agg[0][0],
        agg[0][1],
        "other",
        agg[1][0],
        agg[1][1]
    )
}

pub fn cross_validate(matrix: &EmbeddingMatrix, labels: &[(String, i64)], cv: &CvConfig) -> Result<EvalReport> {
    cross_validate_with(matrix, labels, cv, Execution::default())
}

/// Trains on k-1 folds and predicts the held-out fold, k times; reports
/// pooled accuracy and confusion over all held-out predictions. Folds run
/// according to `exec` and are assembled by fold index.
pub fn cross_validate_with(
    matrix: &EmbeddingMatrix,
    labels: &[(String, i64)],
    cv: &CvConfig,
    exec: Execution,
) -> Result<EvalReport> {
    if labels.is_empty() {
        return Err(Error::domain("no labeled instances to evaluate"));
    }
    let ids: Vec<&str> = labels.iter().map(|(id, _)| id.as_str()).collect();
    let mut seen = BTreeSet::new();
    let dups: Vec<&str> = ids.iter().copied().filter(|id| !seen.insert(*id)).collect();
    if !dups.is_empty() {
        return Err(Error::domain(format!("duplicate label ids: {}", list_ids(&dups))));
    }
    let x = matrix.select(&ids)?;
    let y: Vec<i64> = labels.iter().map(|(_, l)| *l).collect();
    let classes: Vec<i64> = y.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if classes.len() < 2 {
        return Err(Error::domain(format!(
            "cross-validation needs at least two classes, found {}",
            classes.len()
        )));
    }
    let folds = kfold_split(y.len(), cv.folds, cv.seed, cv.stratified.then_some(y.as_slice()))?;

    let per_fold = exec.try_map_range(folds.k, |f| -> Result<Vec<PredictionRecord>> {
        let train = folds.train_indices(f);
        let test = folds.test_indices(f);
        let xt = x.select(ndarray::Axis(0), &train);
        let yt: Vec<i64> = train.iter().map(|&i| y[i]).collect();
        // folds already run concurrently; keep the inner loop sequential
        let model = train_multiclass_with(xt.view(), &yt, &cv.train, Execution::Sequential)
            .map_err(|e| Error::domain(format!("fold {f}: {e}")))?;
        test.iter()
            .map(|&i| {
                let row = x.row(i);
                let p = model.predict(row.as_slice().expect("standard layout"))?;
                Ok(PredictionRecord {
                    id: labels[i].0.clone(),
                    gold: y[i],
                    predicted: p.class_id,
                    fold: f,
                    margins: p.scores,
                })
            })
            .collect()
    })?;

    let index: BTreeMap<i64, usize> = classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut confusion = vec![vec![0u64; classes.len()]; classes.len()];
    let mut predictions: Vec<PredictionRecord> = per_fold.into_iter().flatten().collect();
    for p in &predictions {
        // a fold may predict only classes it saw, all of which are in `classes`
        confusion[index[&p.gold]][index[&p.predicted]] += 1;
    }
    let order: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    predictions.sort_by_key(|p| order[p.id.as_str()]);
    let correct: u64 = (0..classes.len()).map(|i| confusion[i][i]).sum();

    Ok(EvalReport {
        experiment: String::new(),
        n: y.len(),
        accuracy: correct as f64 / y.len() as f64,
        baseline_accuracy: most_frequent_class_baseline(&y)?,
        classes,
        confusion,
        fold_sizes: folds.fold_sizes(),
        predictions,
        config: serde_json::to_value(cv)?,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceFilter {
    All,
    ExcludeClass(u32),
    /// Drops instances whose class is neutral for the feature.
    NonNeutral(FeatureName),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    GoldClass,
    /// `+1` / `-1` from the gold class's feature value.
    Feature(FeatureName),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub filter: InstanceFilter,
    pub labels: LabelSource,
}

impl ExperimentSpec {
    /// All classes.
    pub fn exp1() -> Self {
        ExperimentSpec {
            name: "exp1".into(),
            filter: InstanceFilter::All,
            labels: LabelSource::GoldClass,
        }
    }

    /// All classes except the inherent reflexives.
    pub fn exp2() -> Self {
        ExperimentSpec {
            name: "exp2".into(),
            filter: InstanceFilter::ExcludeClass(1),
            labels: LabelSource::GoldClass,
        }
    }

    /// Binary prediction of one feature.
    pub fn exp3(feature: FeatureName) -> Self {
        ExperimentSpec {
            name: format!("exp3-{feature}"),
            filter: InstanceFilter::NonNeutral(feature),
            labels: LabelSource::Feature(feature),
        }
    }

    pub fn exp3_all() -> Vec<Self> {
        FeatureName::ALL.into_iter().map(Self::exp3).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if let LabelSource::Feature(f) = self.labels {
            if self.filter != InstanceFilter::NonNeutral(f) {
                return Err(Error::domain(format!(
                    "experiment {}: feature labels for '{f}' require removing the classes neutral for it",
                    self.name
                )));
            }
        }
        Ok(())
    }

    /// `(id, label)` pairs selected by this experiment, in dataset order.
    pub fn labeled_instances(&self, gold: &GoldDataset, inventory: &SenseInventory) -> Result<Vec<(String, i64)>> {
        self.validate()?;
        let excluded: BTreeSet<u32> = match self.filter {
            InstanceFilter::All => BTreeSet::new(),
            InstanceFilter::ExcludeClass(c) => [c].into_iter().collect(),
            InstanceFilter::NonNeutral(f) => inventory.neutral_classes(f),
        };
        let mut out = Vec::new();
        for (id, class) in gold.gold_labels()? {
            if excluded.contains(&class) {
                continue;
            }
            let label = match self.labels {
                LabelSource::GoldClass => {
                    inventory.class(class)?;
                    class as i64
                }
                LabelSource::Feature(f) => inventory
                    .feature_value(class, f)?
                    .as_label()
                    .expect("neutral classes filtered out"),
            };
            out.push((id.to_string(), label));
        }
        Ok(out)
    }
}

pub fn run_experiment(
    spec: &ExperimentSpec,
    gold: &GoldDataset,
    inventory: &SenseInventory,
    embeddings: &EmbeddingMatrix,
    cv: &CvConfig,
) -> Result<EvalReport> {
    run_experiment_with(spec, gold, inventory, embeddings, cv, Execution::default())
}

pub fn run_experiment_with(
    spec: &ExperimentSpec,
    gold: &GoldDataset,
    inventory: &SenseInventory,
    embeddings: &EmbeddingMatrix,
    cv: &CvConfig,
    exec: Execution,
) -> Result<EvalReport> {
    let labeled = spec.labeled_instances(gold, inventory)?;
    if labeled.is_empty() {
        return Err(Error::domain(format!("experiment {} selects no instances", spec.name)));
    }
    let mut report = cross_validate_with(embeddings, &labeled, cv, exec)?;
    report.experiment = spec.name.clone();
    report.config = serde_json::json!({
        "experiment": spec,
        "cv": cv,
        "embeddings": embeddings.config(),
    });
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fold_sizes_balanced() {
        let f = kfold_split(10, 5, 42, None).unwrap();
        assert_eq!(f.fold_sizes(), vec![2; 5]);
        let f = kfold_split(335, 5, 42, None).unwrap();
        assert_eq!(f.fold_sizes(), vec![67; 5]);
        let f = kfold_split(13, 5, 1, None).unwrap();
        let sizes = f.fold_sizes();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        assert!(kfold_split(4, 5, 0, None).is_err());
        assert!(kfold_split(4, 1, 0, None).is_err());
    }

    #[test]
    fn folds_deterministic_and_seed_dependent() {
        assert_eq!(kfold_split(50, 5, 7, None).unwrap(), kfold_split(50, 5, 7, None).unwrap());
        assert_ne!(kfold_split(50, 5, 7, None).unwrap().fold_of, kfold_split(50, 5, 8, None).unwrap().fold_of);
    }

    #[test]
    fn stratified_spreads_each_class() {
        let freqs = [(1, 161), (2, 84), (3, 11), (4, 42), (5, 22), (6, 3), (7, 8), (8, 4)];
        let labels: Vec<i64> = freqs.iter().flat_map(|&(c, n)| std::iter::repeat(c).take(n)).collect();
        let f = kfold_split(labels.len(), 5, 42, Some(&labels)).unwrap();
        assert!(f.stratified);
        assert_eq!(f.fold_sizes(), vec![67; 5]);
        for &(c, n) in &freqs {
            for fold in 0..5 {
                let count = f.test_indices(fold).iter().filter(|&&i| labels[i] == c).count();
                assert!(count == n / 5 || count == n.div_ceil(5), "class {c} fold {fold}: {count}");
            }
        }
        let class1: Vec<usize> = (0..5)
            .map(|fold| f.test_indices(fold).iter().filter(|&&i| labels[i] == 1).count())
            .collect();
        assert!(class1.iter().all(|&c| c == 32 || c == 33));
    }

    #[test]
    fn baseline_examples() {
        let mut labels = vec![1i64; 161];
        labels.extend(std::iter::repeat(2).take(84));
        labels.extend([3; 11].iter().chain(&[4; 42]).chain(&[5; 22]).chain(&[6; 3]).chain(&[7; 8]).chain(&[8; 4]));
        assert_eq!(labels.len(), 335);
        assert_eq!(most_frequent_class_baseline(&labels).unwrap(), 161.0 / 335.0);
        let no1: Vec<i64> = labels.iter().copied().filter(|&c| c != 1).collect();
        assert_eq!(most_frequent_class_baseline(&no1).unwrap(), 84.0 / 174.0);
        assert_eq!(most_frequent_class_baseline(&[1, -1, 1, -1]).unwrap(), 0.5);
        assert!(most_frequent_class_baseline(&[]).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let classes: Vec<i64> = (1..=3).collect();
        let confusion = vec![vec![5, 1, 2], vec![3, 4, 0], vec![1, 0, 6]];
        let agg = aggregate_confusion(&classes, &confusion, 1).unwrap();
        assert_eq!(agg, [[5, 3], [4, 10]]);
        assert_eq!(agg.iter().flatten().sum::<u64>(), 22);
        let diag = vec![vec![2, 0, 0], vec![0, 3, 0], vec![0, 0, 4]];
        assert_eq!(aggregate_confusion(&classes, &diag, 1).unwrap(), [[2, 0], [0, 7]]);
        assert!(aggregate_confusion(&classes, &diag, 9).is_err());
        assert!(render_aggregate(1, &agg).contains("class 1"));
    }

    #[test]
    fn spec_consistency() {
        let bad = ExperimentSpec {
            name: "x".into(),
            filter: InstanceFilter::All,
            labels: LabelSource::Feature(FeatureName::Agentive),
        };
        assert!(bad.validate().is_err());
        for spec in ExperimentSpec::exp3_all() {
            spec.validate().unwrap();
        }
        assert_eq!(ExperimentSpec::exp3(FeatureName::Lassen).name, "exp3-lassen");
    }
}
