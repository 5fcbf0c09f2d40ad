//! L2-regularized linear SVM trained by dual coordinate descent, with
//! one-vs-rest multiclass prediction and margin-based abstention.
//!
//! The bias is learned as the weight of an implicit constant-1 feature and is
//! therefore regularized together with the weights. The primal objective is
//!
//! ```text
//! 1/2 (|w|^2 + b^2) + C * sum_i max(0, 1 - y_i (w.x_i + b))
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ndarray::{ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Hinge-loss weight.
    pub c: f64,
    pub max_epochs: usize,
    /// Stop once the projected-gradient spread of an epoch falls below this.
    pub tolerance: f64,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            c: 1.0,
            max_epochs: 1000,
            tolerance: 1e-4,
            shuffle_seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::domain(format!("C must be positive, got {}", self.c)));
        }
        if self.max_epochs == 0 {
            return Err(Error::domain("max_epochs must be positive"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::domain("tolerance must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryLinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl BinaryLinearModel {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }

    /// Regularized hinge objective on `(x, y)`.
    pub fn primal_objective(&self, x: ArrayView2<f64>, y: &[f64], c: f64) -> f64 {
        let reg = 0.5 * (dot(&self.weights, &self.weights) + self.bias * self.bias);
        let loss: f64 = x
            .axis_iter(Axis(0))
            .zip(y)
            .map(|(row, &yi)| (1.0 - yi * self.decision_view(row)).max(0.0))
            .sum();
        reg + c * loss
    }

    fn decision_view(&self, x: ArrayView1<f64>) -> f64 {
        x.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>() + self.bias
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-epoch record of a dual coordinate descent run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    /// Dual objective after each completed epoch.
    pub dual_objective: Vec<f64>,
    pub converged: bool,
}

impl TrainTrace {
    pub fn epochs(&self) -> usize {
        self.dual_objective.len()
    }
}

fn check_labels(y: &[f64]) -> Result<()> {
    match y.iter().find(|&&v| v != 1.0 && v != -1.0) {
        Some(v) => Err(Error::domain(format!("binary labels must be +1 or -1, got {v}"))),
        None => Ok(()),
    }
}

pub fn train_binary(x: ArrayView2<f64>, y: &[f64], config: &TrainConfig) -> Result<BinaryLinearModel> {
    train_binary_traced(x, y, config).map(|(m, _)| m)
}

/// Dual coordinate descent on the hinge-loss SVM dual
/// `max_a sum(a) - 1/2 |sum_i a_i y_i x_i|^2` subject to `0 <= a_i <= C`,
/// where `x_i` carries the constant bias feature.
///
/// With one label class only, the result is a constant classifier.
pub fn train_binary_traced(x: ArrayView2<f64>, y: &[f64], config: &TrainConfig) -> Result<(BinaryLinearModel, TrainTrace)> {
    config.validate()?;
    let (n, d) = x.dim();
    if n == 0 {
        return Err(Error::domain("no training instances"));
    }
    if y.len() != n {
        return Err(Error::domain(format!("{} labels for {n} instances", y.len())));
    }
    check_labels(y)?;
    let c = config.c;

    let rows: Vec<Vec<f64>> = x.axis_iter(Axis(0)).map(|r| r.to_vec()).collect();
    // squared norms including the bias feature
    let q_diag: Vec<f64> = rows.iter().map(|r| dot(r, r) + 1.0).collect();
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.shuffle_seed);

    let mut trace = TrainTrace {
        dual_objective: Vec::new(),
        converged: false,
    };
    for _ in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut pg_max = f64::NEG_INFINITY;
        let mut pg_min = f64::INFINITY;
        for &i in &order {
            let yi = y[i];
            let g = yi * (dot(&w, &rows[i]) + b) - 1.0;
            let pg = if alpha[i] == 0.0 {
                g.min(0.0)
            } else if alpha[i] == c {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg != 0.0 {
                let old = alpha[i];
                alpha[i] = (old - g / q_diag[i]).clamp(0.0, c);
                let step = (alpha[i] - old) * yi;
                if step != 0.0 {
                    for (wj, xj) in w.iter_mut().zip(&rows[i]) {
                        *wj += step * xj;
                    }
                    b += step;
                }
            }
        }
        let dual = alpha.iter().sum::<f64>() - 0.5 * (dot(&w, &w) + b * b);
        trace.dual_objective.push(dual);
        if pg_max - pg_min <= config.tolerance {
            trace.converged = true;
            break;
        }
    }
    Ok((BinaryLinearModel { weights: w, bias: b }, trace))
}

/// Outcome of a multiclass prediction. `class_id` is always the top-scoring
/// class; `abstained` reports whether the caller's confidence requirement was
/// met.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class_id: i64,
    pub scores: BTreeMap<i64, f64>,
    pub abstained: bool,
}

impl Prediction {
    /// Gap between the best and the runner-up score.
    pub fn top_gap(&self) -> f64 {
        let (top, second) = top_two(&self.scores);
        top - second
    }

    pub fn top_score(&self) -> f64 {
        top_two(&self.scores).0
    }
}

fn top_two(scores: &BTreeMap<i64, f64>) -> (f64, f64) {
    let mut top = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &s in scores.values() {
        if s > top {
            second = top;
            top = s;
        } else if s > second {
            second = s;
        }
    }
    (top, second)
}

/// One-vs-rest ensemble of binary models, one per class in ascending id
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct MulticlassModel {
    class_ids: Vec<i64>,
    models: Vec<BinaryLinearModel>,
    dim: usize,
    config: TrainConfig,
}

pub fn train_multiclass(x: ArrayView2<f64>, y: &[i64], config: &TrainConfig) -> Result<MulticlassModel> {
    train_multiclass_with(x, y, config, Execution::default())
}

/// The per-class problems are independent and run according to `exec`; the
/// result does not depend on it.
pub fn train_multiclass_with(x: ArrayView2<f64>, y: &[i64], config: &TrainConfig, exec: Execution) -> Result<MulticlassModel> {
    config.validate()?;
    if y.len() != x.nrows() {
        return Err(Error::domain(format!("{} labels for {} instances", y.len(), x.nrows())));
    }
    let class_ids: Vec<i64> = y.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if class_ids.len() < 2 {
        return Err(Error::domain(format!(
            "multiclass training needs at least two classes, found {}",
            class_ids.len()
        )));
    }
    let models = exec.try_map_range(class_ids.len(), |k| {
        let target = class_ids[k];
        let yk: Vec<f64> = y.iter().map(|&c| if c == target { 1.0 } else { -1.0 }).collect();
        train_binary(x, &yk, config)
    })?;
    Ok(MulticlassModel {
        dim: x.ncols(),
        class_ids,
        models,
        config: *config,
    })
}

impl MulticlassModel {
    pub fn new(class_ids: Vec<i64>, models: Vec<BinaryLinearModel>, config: TrainConfig) -> Result<Self> {
        if class_ids.len() < 2 || class_ids.len() != models.len() {
            return Err(Error::domain("model needs one binary model for each of at least two classes"));
        }
        if class_ids.iter().collect::<BTreeSet<_>>().len() != class_ids.len() {
            return Err(Error::domain("duplicate class ids in model"));
        }
        let dim = models[0].dim();
        if models.iter().any(|m| m.dim() != dim) {
            return Err(Error::domain("binary models disagree on dimension"));
        }
        if models.iter().any(|m| !m.bias.is_finite() || m.weights.iter().any(|w| !w.is_finite())) {
            return Err(Error::domain("model parameters must be finite"));
        }
        // keep ascending id order
        let mut pairs: Vec<_> = class_ids.into_iter().zip(models).collect();
        pairs.sort_by_key(|(c, _)| *c);
        let (class_ids, models) = pairs.into_iter().unzip();
        Ok(MulticlassModel {
            class_ids,
            models,
            dim,
            config,
        })
    }

    pub fn class_ids(&self) -> &[i64] {
        &self.class_ids
    }

    pub fn models(&self) -> &[BinaryLinearModel] {
        &self.models
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn scores(&self, x: &[f64]) -> Result<BTreeMap<i64, f64>> {
        if x.len() != self.dim {
            return Err(Error::domain(format!(
                "input has dimension {}, model expects {}",
                x.len(),
                self.dim
            )));
        }
        Ok(self
            .class_ids
            .iter()
            .zip(&self.models)
            .map(|(&c, m)| (c, m.decision(x)))
            .collect())
    }

    /// Argmax over the per-class margins; ties go to the smaller class id.
    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        let scores = self.scores(x)?;
        // BTreeMap iterates ascending, strict comparison keeps the first max
        let mut best = (self.class_ids[0], f64::NEG_INFINITY);
        for (&c, &s) in &scores {
            if s > best.1 {
                best = (c, s);
            }
        }
        Ok(Prediction {
            class_id: best.0,
            scores,
            abstained: false,
        })
    }

    /// Answers only when the winning margin is positive and leads the
    /// runner-up by at least `min_margin`.
    pub fn predict_abstaining(&self, x: &[f64], min_margin: f64) -> Result<Prediction> {
        if !(min_margin >= 0.0) {
            return Err(Error::domain(format!("min_margin must be non-negative, got {min_margin}")));
        }
        let mut p = self.predict(x)?;
        let (top, second) = top_two(&p.scores);
        p.abstained = !(top > 0.0 && top - second >= min_margin);
        Ok(p)
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            classes: self.class_ids.clone(),
            dim: self.dim,
            models: self
                .class_ids
                .iter()
                .zip(&self.models)
                .map(|(&c, m)| ModelEntry {
                    class: c,
                    weights: m.weights.clone(),
                    bias: m.bias,
                })
                .collect(),
            config: self.config,
        }
    }

    pub fn from_file(file: ModelFile) -> Result<Self> {
        if file.models.iter().map(|m| m.class).collect::<Vec<_>>() != file.classes {
            return Err(Error::format("model entries do not match the class list"));
        }
        if file.models.iter().any(|m| m.weights.len() != file.dim) {
            return Err(Error::format("weight vector length differs from model dimension"));
        }
        Self::new(
            file.classes,
            file.models
                .into_iter()
                .map(|m| BinaryLinearModel {
                    weights: m.weights,
                    bias: m.bias,
                })
                .collect(),
            file.config,
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub class: i64,
    pub weights: Vec<f64>,
    pub bias: f64,
}

/// On-disk model layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub classes: Vec<i64>,
    pub dim: usize,
    pub models: Vec<ModelEntry>,
    pub config: TrainConfig,
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn blobs(per_class: usize, seed: u64) -> (Array2<f64>, Vec<i64>) {
        let centers = [(0.0, 10.0), (10.0, -5.0), (-10.0, -5.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array2::zeros((per_class * 3, 2));
        let mut y = Vec::new();
        for (k, (cx, cy)) in centers.iter().enumerate() {
            for i in 0..per_class {
                let r = k * per_class + i;
                x[[r, 0]] = cx + 0.5 * rng.sample::<f64, _>(StandardNormal);
                x[[r, 1]] = cy + 0.5 * rng.sample::<f64, _>(StandardNormal);
                y.push(k as i64 + 1);
            }
        }
        (x, y)
    }

    #[test]
    fn separable_pair() {
        let x = array![[1.0, 0.0], [-1.0, 0.0]];
        let m = train_binary(x.view(), &[1.0, -1.0], &TrainConfig::default()).unwrap();
        assert!(m.decision(&[1.0, 0.0]) > 0.0);
        assert!(m.decision(&[-1.0, 0.0]) < 0.0);
    }

    #[test]
    fn xor_cannot_be_learned() {
        let x = array![[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]];
        let y = [1.0, 1.0, -1.0, -1.0];
        let (m, trace) = train_binary_traced(x.view(), &y, &TrainConfig::default()).unwrap();
        assert!(trace.epochs() <= 1000);
        let correct = x
            .axis_iter(Axis(0))
            .zip(&y)
            .filter(|(r, &yi)| (m.decision(r.as_slice().unwrap()) > 0.0) == (yi > 0.0))
            .count();
        assert!(correct <= 3);
    }

    #[test]
    fn dual_objective_never_decreases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((60, 5), |_| rng.sample::<f64, _>(StandardNormal));
        let y: Vec<f64> = (0..60).map(|i| if (x[[i, 0]] + 0.3 * x[[i, 1]] + 0.8 * rng.sample::<f64, _>(StandardNormal)) > 0.0 { 1.0 } else { -1.0 }).collect();
        let (_, trace) = train_binary_traced(x.view(), &y, &TrainConfig::default()).unwrap();
        assert!(trace.epochs() > 1);
        for w in trace.dual_objective.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0), "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn single_label_gives_constant_classifier() {
        let x = array![[1.0, 2.0], [3.0, -1.0]];
        let m = train_binary(x.view(), &[1.0, 1.0], &TrainConfig::default()).unwrap();
        assert!(m.decision(&[1.0, 2.0]) > 0.0);
    }

    #[test]
    fn training_input_validation() {
        let x = array![[1.0], [2.0]];
        assert!(train_binary(x.view(), &[1.0], &TrainConfig::default()).is_err());
        assert!(train_binary(x.view(), &[1.0, 0.0], &TrainConfig::default()).is_err());
        let bad = TrainConfig { c: 0.0, ..TrainConfig::default() };
        assert!(train_binary(x.view(), &[1.0, -1.0], &bad).is_err());
        assert!(train_multiclass(x.view(), &[3, 3], &TrainConfig::default()).is_err());
    }

    #[test]
    fn blobs_fit_perfectly() {
        let (x, y) = blobs(20, 1);
        let m = train_multiclass(x.view(), &y, &TrainConfig::default()).unwrap();
        assert_eq!(m.class_ids(), &[1, 2, 3]);
        for (row, &label) in x.axis_iter(Axis(0)).zip(&y) {
            let p = m.predict(row.as_slice().unwrap()).unwrap();
            assert_eq!(p.class_id, label);
            assert_eq!(p.scores.len(), 3);
            assert!(p.scores.values().all(|&s| s <= p.scores[&p.class_id]));
        }
    }

    #[test]
    fn deterministic_across_runs_and_execution() {
        let (x, y) = blobs(15, 2);
        let cfg = TrainConfig::default();
        let a = train_multiclass_with(x.view(), &y, &cfg, Execution::Sequential).unwrap();
        let b = train_multiclass_with(x.view(), &y, &cfg, Execution::Parallel).unwrap();
        let c = train_multiclass(x.view(), &y, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn row_order_does_not_change_predictions() {
        let (x, y) = blobs(15, 3);
        let m = train_multiclass(x.view(), &y, &TrainConfig::default()).unwrap();
        let perm: Vec<usize> = (0..y.len()).rev().collect();
        let xp = x.select(Axis(0), &perm);
        let yp: Vec<i64> = perm.iter().map(|&i| y[i]).collect();
        let mp = train_multiclass(xp.view(), &yp, &TrainConfig::default()).unwrap();
        let (test, _) = blobs(10, 99);
        for row in test.axis_iter(Axis(0)) {
            let r = row.as_slice().unwrap();
            assert_eq!(m.predict(r).unwrap().class_id, mp.predict(r).unwrap().class_id);
        }
    }

    fn fixed_model() -> MulticlassModel {
        MulticlassModel::new(
            vec![3, 1, 2],
            vec![
                BinaryLinearModel { weights: vec![0.0, 1.0], bias: 0.0 },
                BinaryLinearModel { weights: vec![1.0, 0.0], bias: 0.0 },
                BinaryLinearModel { weights: vec![1.0, 0.0], bias: 0.0 },
            ],
            TrainConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn ties_go_to_smaller_class() {
        let m = fixed_model();
        assert_eq!(m.class_ids(), &[1, 2, 3]);
        assert_eq!(m.predict(&[2.0, 1.0]).unwrap().class_id, 1);
        assert_eq!(m.predict(&[2.0, 2.0]).unwrap().class_id, 1);
        assert_eq!(m.predict(&[1.0, 2.0]).unwrap().class_id, 3);
        assert!(m.predict(&[1.0]).is_err());
    }

    #[test]
    fn abstention_thresholds() {
        let m = fixed_model();
        let x = [1.0, 3.0];
        assert!(!m.predict_abstaining(&x, 0.0).unwrap().abstained);
        assert!(m.predict_abstaining(&x, f64::INFINITY).unwrap().abstained);
        assert!(!m.predict_abstaining(&x, 2.0).unwrap().abstained);
        assert!(m.predict_abstaining(&x, 2.1).unwrap().abstained);
        // negative top margin always abstains
        assert!(m.predict_abstaining(&[-1.0, -2.0], 0.0).unwrap().abstained);
        assert!(m.predict_abstaining(&x, -1.0).is_err());
        assert!(m.predict_abstaining(&x, f64::NAN).is_err());
    }

    #[test]
    fn model_json_round_trip_is_exact() {
        let (x, y) = blobs(10, 4);
        let m = train_multiclass(x.view(), &y, &TrainConfig { c: 0.37, ..TrainConfig::default() }).unwrap();
        let json = m.to_json();
        assert!(json.starts_with(r#"{"classes":[1,2,3],"dim":2,"models":[{"class":1,"weights":["#));
        let back = MulticlassModel::from_json(&json).unwrap();
        assert_eq!(back, m);
        assert!(MulticlassModel::from_json(r#"{"classes":[1],"dim":1,"models":[],"config":{}}"#).is_err());
    }
}
