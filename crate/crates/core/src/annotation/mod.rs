//! Double annotation: per-annotator labels, agreement statistics and
//! adjudication into a gold dataset.

mod gold;
mod store;

use std::collections::{BTreeMap, HashMap};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{list_ids, Error, Result};

pub use gold::{class_frequencies, ClassFrequencies, FieldMapping, GoldDataset, GoldItem, GoldRecord, Adjudication};
pub use store::{AgreementError, LabelStore};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub instance_id: String,
    pub annotator: String,
    pub class_id: u32,
    /// UTC seconds since the Unix epoch.
    pub timestamp: u64,
}

impl Label {
    pub fn new(instance_id: impl Into<String>, annotator: impl Into<String>, class_id: u32) -> Self {
        Label {
            instance_id: instance_id.into(),
            annotator: annotator.into(),
            class_id,
            timestamp: now_secs(),
        }
    }
}

pub(crate) fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Square count matrix over an ordered class list. Rows belong to the first
/// annotator (or the actual class), columns to the second (or the prediction).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: Vec<u32>,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(classes: Vec<u32>) -> Self {
        let k = classes.len();
        ConfusionMatrix {
            classes,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn from_counts(classes: Vec<u32>, counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = classes.len();
        if counts.len() != k || counts.iter().any(|r| r.len() != k) {
            return Err(Error::domain(format!("confusion matrix must be {k}x{k}")));
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn classes(&self) -> &[u32] {
        &self.classes
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    fn index(&self, class_id: u32) -> Result<usize> {
        self.classes
            .iter()
            .position(|&c| c == class_id)
            .ok_or_else(|| Error::domain(format!("class {class_id} is not in the matrix")))
    }

    pub fn get(&self, row_class: u32, col_class: u32) -> u64 {
        match (self.index(row_class), self.index(col_class)) {
            (Ok(i), Ok(j)) => self.counts[i][j],
            _ => 0,
        }
    }

    pub fn increment(&mut self, row_class: u32, col_class: u32) -> Result<()> {
        let (i, j) = (self.index(row_class)?, self.index(col_class)?);
        self.counts[i][j] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn diagonal(&self) -> u64 {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.classes.len())
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let k = self.classes.len();
        let counts = (0..k).map(|i| (0..k).map(|j| self.counts[j][i]).collect()).collect();
        ConfusionMatrix {
            classes: self.classes.clone(),
            counts,
        }
    }

    /// Count of instances where one side chose `a` and the other `b`, in
    /// either direction.
    pub fn confusions_between(&self, a: u32, b: u32) -> u64 {
        if a == b {
            return self.get(a, a);
        }
        self.get(a, b) + self.get(b, a)
    }

    pub fn off_diagonal(&self) -> u64 {
        self.total() - self.diagonal()
    }

    pub fn observed_agreement(&self) -> f64 {
        self.diagonal() as f64 / self.total() as f64
    }

    pub fn expected_agreement(&self) -> f64 {
        let n = self.total() as f64;
        self.row_sums()
            .iter()
            .zip(self.col_sums())
            .map(|(&r, c)| r as f64 * c as f64)
            .sum::<f64>()
            / (n * n)
    }
}

/// Cohen's kappa, `(p_o - p_e) / (1 - p_e)`.
///
/// When chance agreement is total (`p_e = 1`, a single category used by both
/// sides) the value is defined as 1.0 if observed agreement is also total.
pub fn cohen_kappa(matrix: &ConfusionMatrix) -> Result<f64> {
    if matrix.total() == 0 {
        return Err(Error::domain("cannot compute kappa of an empty matrix"));
    }
    let po = matrix.observed_agreement();
    let pe = matrix.expected_agreement();
    if (1.0 - pe).abs() < 1e-12 {
        if (1.0 - po).abs() < 1e-12 {
            return Ok(1.0);
        }
        return Err(Error::domain("kappa undefined: chance agreement is 1 but observed agreement is not"));
    }
    Ok((po - pe) / (1.0 - pe))
}

/// Collapses each annotator's labels to the latest label per instance.
fn latest_by_instance(labels: &[Label]) -> HashMap<&str, &Label> {
    let mut out: HashMap<&str, &Label> = HashMap::new();
    for label in labels {
        match out.get(label.instance_id.as_str()) {
            Some(prev) if prev.timestamp > label.timestamp => {}
            _ => {
                out.insert(label.instance_id.as_str(), label);
            }
        }
    }
    out
}

/// Pairs up both annotators' labels by instance id, sorted by id. Fails when
/// the labeled instance sets differ.
fn aligned<'a>(labels_a: &'a [Label], labels_b: &'a [Label]) -> Result<Vec<(&'a str, u32, u32)>> {
    let a = latest_by_instance(labels_a);
    let b = latest_by_instance(labels_b);
    let mut missing: Vec<String> = a
        .keys()
        .filter(|id| !b.contains_key(*id))
        .map(|id| format!("{id} (second annotator)"))
        .chain(
            b.keys()
                .filter(|id| !a.contains_key(*id))
                .map(|id| format!("{id} (first annotator)")),
        )
        .collect();
    if !missing.is_empty() {
        missing.sort();
        return Err(Error::domain(format!(
            "annotators labeled different instance sets; missing: {}",
            list_ids(&missing)
        )));
    }
    let mut pairs: Vec<_> = a
        .iter()
        .map(|(id, la)| (*id, la.class_id, b[id].class_id))
        .collect();
    pairs.sort_by(|x, y| x.0.cmp(y.0));
    Ok(pairs)
}

/// Cell `(i, j)` counts instances labeled `i` by the first annotator and `j`
/// by the second.
pub fn confusion_matrix(labels_a: &[Label], labels_b: &[Label], classes: &[u32]) -> Result<ConfusionMatrix> {
    let mut matrix = ConfusionMatrix::zeros(classes.to_vec());
    for (id, a, b) in aligned(labels_a, labels_b)? {
        matrix
            .increment(a, b)
            .map_err(|e| Error::domain(format!("instance {id}: {e}")))?;
    }
    Ok(matrix)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disagreement {
    pub instance_id: String,
    pub label_a: u32,
    pub label_b: u32,
}

pub fn disagreements(labels_a: &[Label], labels_b: &[Label]) -> Result<Vec<Disagreement>> {
    Ok(aligned(labels_a, labels_b)?
        .into_iter()
        .filter(|(_, a, b)| a != b)
        .map(|(id, a, b)| Disagreement {
            instance_id: id.to_string(),
            label_a: a,
            label_b: b,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub annotator_a: String,
    pub annotator_b: String,
    pub classes: Vec<u32>,
    /// Rows: first annotator; columns: second annotator.
    pub matrix: Vec<Vec<u64>>,
    pub n: u64,
    pub observed_agreement: f64,
    pub expected_agreement: f64,
    pub kappa: f64,
}

impl AgreementReport {
    pub fn from_matrix(annotator_a: &str, annotator_b: &str, matrix: &ConfusionMatrix) -> Result<Self> {
        Ok(AgreementReport {
            annotator_a: annotator_a.to_string(),
            annotator_b: annotator_b.to_string(),
            classes: matrix.classes().to_vec(),
            matrix: matrix.counts().to_vec(),
            n: matrix.total(),
            observed_agreement: matrix.observed_agreement(),
            expected_agreement: matrix.expected_agreement(),
            kappa: cohen_kappa(matrix)?,
        })
    }

    /// Plain-text rendering with the second annotator across the top.
    pub fn render(&self) -> String {
        let mut out = format!("{:>8} |", format!("{}\\{}", self.annotator_a, self.annotator_b));
        for c in &self.classes {
            out.push_str(&format!("{c:>5}"));
        }
        out.push('\n');
        out.push_str(&"-".repeat(10 + 5 * self.classes.len()));
        out.push('\n');
        for (c, row) in self.classes.iter().zip(&self.matrix) {
            out.push_str(&format!("{c:>8} |"));
            for v in row {
                out.push_str(&format!("{v:>5}"));
            }
            out.push('\n');
        }
        out.push_str(&format!(
            "n = {}, observed = {:.4}, expected = {:.4}, kappa = {:.4}\n",
            self.n, self.observed_agreement, self.expected_agreement, self.kappa
        ));
        out
    }
}

pub fn class_counts<I: IntoIterator<Item = u32>>(labels: I) -> BTreeMap<u32, usize> {
    let mut counts = BTreeMap::new();
    for c in labels {
        *counts.entry(c).or_insert(0) += 1;
    }
    counts
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Inter-annotator confusion table of the *sich* study. Rows: second
    /// annotator, columns: first annotator.
    pub(crate) const SICH_DOUBLE_ANNOTATION: [[u64; 8]; 8] = [
        [143, 6, 6, 1, 0, 0, 0, 0],
        [25, 60, 0, 2, 0, 0, 0, 0],
        [2, 1, 11, 0, 0, 0, 0, 0],
        [6, 0, 1, 28, 4, 0, 0, 0],
        [2, 0, 1, 3, 18, 0, 0, 0],
        [0, 0, 0, 0, 0, 3, 0, 0],
        [0, 0, 0, 0, 0, 0, 8, 0],
        [1, 0, 0, 0, 0, 0, 0, 3],
    ];

    pub(crate) fn sich_matrix() -> ConfusionMatrix {
        ConfusionMatrix::from_counts((1..=8).collect(), SICH_DOUBLE_ANNOTATION.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    fn labels(annotator: &str, pairs: &[(&str, u32)]) -> Vec<Label> {
        pairs
            .iter()
            .map(|(id, c)| Label {
                instance_id: id.to_string(),
                annotator: annotator.to_string(),
                class_id: *c,
                timestamp: 0,
            })
            .collect()
    }

    #[test]
    fn kappa_on_published_matrix() {
        let m = sich_matrix();
        assert_eq!(m.total(), 335);
        let k = cohen_kappa(&m).unwrap();
        assert!((k - 0.732).abs() <= 0.001, "{k}");
    }

    #[test]
    fn kappa_identities() {
        let diag = ConfusionMatrix::from_counts(vec![1, 2, 3], vec![vec![4, 0, 0], vec![0, 5, 0], vec![0, 0, 1]]).unwrap();
        assert_eq!(cohen_kappa(&diag).unwrap(), 1.0);

        let chance = ConfusionMatrix::from_counts(vec![1, 2], vec![vec![25, 25], vec![25, 25]]).unwrap();
        assert!(cohen_kappa(&chance).unwrap().abs() < 1e-12);

        let single = ConfusionMatrix::from_counts(vec![1, 2], vec![vec![7, 0], vec![0, 0]]).unwrap();
        assert_eq!(cohen_kappa(&single).unwrap(), 1.0);

        assert!(cohen_kappa(&ConfusionMatrix::zeros(vec![1, 2])).is_err());
    }

    #[test]
    fn kappa_symmetric_and_scale_invariant() {
        let m = sich_matrix();
        let k = cohen_kappa(&m).unwrap();
        assert!((cohen_kappa(&m.transpose()).unwrap() - k).abs() < 1e-12);
        let scaled = ConfusionMatrix::from_counts(
            m.classes().to_vec(),
            m.counts().iter().map(|r| r.iter().map(|v| v * 3).collect()).collect(),
        )
        .unwrap();
        assert!((cohen_kappa(&scaled).unwrap() - k).abs() < 1e-12);
    }

    #[test]
    fn disagreement_counts_on_published_matrix() {
        let m = sich_matrix();
        assert_eq!(m.off_diagonal(), 61);
        assert_eq!(m.confusions_between(1, 2), 31);
        assert_eq!(m.confusions_between(1, 3), 8);
    }

    #[test]
    fn confusion_from_labels() {
        let classes: Vec<u32> = (1..=8).collect();
        let a = labels("A", &[("x", 2), ("y", 2), ("z", 2)]);
        let b = labels("B", &[("z", 2), ("y", 2), ("x", 2)]);
        let m = confusion_matrix(&a, &b, &classes).unwrap();
        assert_eq!(m.get(2, 2), 3);
        assert_eq!(m.total(), 3);
        assert_eq!(m.observed_agreement(), 1.0);

        let a = labels("A", &[("x", 4)]);
        let b = labels("B", &[("x", 5)]);
        let m = confusion_matrix(&a, &b, &classes).unwrap();
        assert_eq!(m.get(4, 5), 1);
        assert_eq!(m.total(), 1);
        assert_eq!(m.get(5, 4), 0);
    }

    #[test]
    fn mismatched_sets_list_missing_ids() {
        let a = labels("A", &[("x", 1), ("y", 1)]);
        let b = labels("B", &[("x", 1), ("w", 2)]);
        let err = confusion_matrix(&a, &b, &[1, 2]).unwrap_err().to_string();
        assert!(err.contains("y (second annotator)"), "{err}");
        assert!(err.contains("w (first annotator)"), "{err}");
    }

    #[test]
    fn latest_label_wins() {
        let mut a = labels("A", &[("x", 1)]);
        a.push(Label {
            instance_id: "x".into(),
            annotator: "A".into(),
            class_id: 3,
            timestamp: 10,
        });
        let b = labels("B", &[("x", 3)]);
        assert!(disagreements(&a, &b).unwrap().is_empty());
    }

    #[test]
    fn disagreements_sorted() {
        let a = labels("A", &[("c", 1), ("a", 2), ("b", 3)]);
        let b = labels("B", &[("c", 2), ("a", 2), ("b", 1)]);
        let d = disagreements(&a, &b).unwrap();
        let ids: Vec<_> = d.iter().map(|d| d.instance_id.as_str()).collect();
        assert_eq!(ids, ["b", "c"]);
        assert_eq!((d[1].label_a, d[1].label_b), (1, 2));
        assert!(disagreements(&a, &a).unwrap().is_empty());
    }

    #[test]
    fn report_render_mentions_kappa() {
        let r = AgreementReport::from_matrix("2", "1", &sich_matrix()).unwrap();
        assert!(r.render().contains("kappa = 0.7321"));
        assert_eq!(r.matrix[1][0], 25);
    }
}
