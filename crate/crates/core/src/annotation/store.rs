use std::collections::HashMap;
use std::sync::RwLock;

use super::{confusion_matrix, disagreements, AgreementReport, Disagreement, GoldDataset, Label};
use crate::corpus::Instance;
use crate::error::{Error, Result};
use crate::schema::SenseInventory;

/// Why agreement cannot be reported yet.
#[derive(Debug, thiserror::Error)]
pub enum AgreementError {
    #[error("{missing} label(s) missing before agreement can be computed")]
    Incomplete { missing: usize },
    #[error(transparent)]
    Other(#[from] Error),
}

#[derive(Debug, Default)]
struct Inner {
    log: Vec<Label>,
    /// (instance, annotator) -> position of the live label in `log`.
    latest: HashMap<(String, String), usize>,
    dataset: GoldDataset,
}

/// Concurrent label store backing the annotation server.
///
/// Labels are appended to a log; the latest write per (instance, annotator)
/// is the live label. All reads operate on a consistent snapshot.
#[derive(Debug)]
pub struct LabelStore {
    inventory: SenseInventory,
    annotator_a: String,
    annotator_b: String,
    inner: RwLock<Inner>,
}

impl LabelStore {
    /// Labels already present in the dataset are imported under the two
    /// annotator names.
    pub fn new(dataset: GoldDataset, inventory: SenseInventory, annotator_a: &str, annotator_b: &str) -> Result<Self> {
        if annotator_a == annotator_b {
            return Err(Error::domain("the two annotators must have distinct names"));
        }
        dataset.validate_labels(&inventory)?;
        let (la, lb) = dataset.annotator_labels(annotator_a, annotator_b);
        let store = LabelStore {
            inventory,
            annotator_a: annotator_a.to_string(),
            annotator_b: annotator_b.to_string(),
            inner: RwLock::new(Inner {
                dataset,
                ..Inner::default()
            }),
        };
        {
            let mut inner = store.inner.write().unwrap();
            for label in la.into_iter().chain(lb) {
                Self::append(&mut inner, label);
            }
        }
        Ok(store)
    }

    pub fn inventory(&self) -> &SenseInventory {
        &self.inventory
    }

    pub fn annotators(&self) -> (&str, &str) {
        (&self.annotator_a, &self.annotator_b)
    }

    fn append(inner: &mut Inner, label: Label) {
        let key = (label.instance_id.clone(), label.annotator.clone());
        inner.log.push(label);
        let pos = inner.log.len() - 1;
        inner.latest.insert(key, pos);
    }

    pub fn put_label(&self, label: Label) -> Result<()> {
        self.inventory.class(label.class_id)?;
        if label.annotator.trim().is_empty() {
            return Err(Error::domain("annotator name is empty"));
        }
        let mut inner = self.inner.write().unwrap();
        if inner.dataset.get(&label.instance_id).is_none() {
            return Err(Error::domain(format!("unknown instance {}", label.instance_id)));
        }
        Self::append(&mut inner, label);
        Ok(())
    }

    pub fn label_of(&self, instance_id: &str, annotator: &str) -> Option<Label> {
        let inner = self.inner.read().unwrap();
        inner
            .latest
            .get(&(instance_id.to_string(), annotator.to_string()))
            .map(|&p| inner.log[p].clone())
    }

    /// Live labels of one annotator in dataset order.
    pub fn labels_of(&self, annotator: &str) -> Vec<Label> {
        let inner = self.inner.read().unwrap();
        Self::labels_locked(&inner, annotator)
    }

    fn labels_locked(inner: &Inner, annotator: &str) -> Vec<Label> {
        inner
            .dataset
            .items()
            .iter()
            .filter_map(|item| {
                inner
                    .latest
                    .get(&(item.id().to_string(), annotator.to_string()))
                    .map(|&p| inner.log[p].clone())
            })
            .collect()
    }

    pub fn log_len(&self) -> usize {
        self.inner.read().unwrap().log.len()
    }

    pub fn len(&self) -> usize {
        self.inner.read().unwrap().dataset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn instance(&self, id: &str) -> Option<Instance> {
        self.inner.read().unwrap().dataset.get(id).map(|i| i.instance.clone())
    }

    /// First instance in dataset order without a label from `annotator`.
    pub fn next_unlabeled(&self, annotator: &str) -> Option<Instance> {
        let inner = self.inner.read().unwrap();
        inner
            .dataset
            .items()
            .iter()
            .find(|item| !inner.latest.contains_key(&(item.id().to_string(), annotator.to_string())))
            .map(|item| item.instance.clone())
    }

    /// Labels still missing from the two configured annotators.
    pub fn missing_labels(&self) -> usize {
        let inner = self.inner.read().unwrap();
        Self::missing_locked(&inner, &self.annotator_a, &self.annotator_b)
    }

    fn missing_locked(inner: &Inner, a: &str, b: &str) -> usize {
        inner
            .dataset
            .items()
            .iter()
            .map(|item| {
                [a, b]
                    .iter()
                    .filter(|ann| !inner.latest.contains_key(&(item.id().to_string(), ann.to_string())))
                    .count()
            })
            .sum()
    }

    pub fn agreement(&self) -> Result<AgreementReport, AgreementError> {
        let inner = self.inner.read().unwrap();
        let missing = Self::missing_locked(&inner, &self.annotator_a, &self.annotator_b);
        if missing > 0 || inner.dataset.is_empty() {
            return Err(AgreementError::Incomplete { missing });
        }
        let la = Self::labels_locked(&inner, &self.annotator_a);
        let lb = Self::labels_locked(&inner, &self.annotator_b);
        let matrix = confusion_matrix(&la, &lb, &self.inventory.class_ids())?;
        Ok(AgreementReport::from_matrix(&self.annotator_a, &self.annotator_b, &matrix)?)
    }

    /// Disagreements among instances both annotators have labeled, with the
    /// current adjudication state.
    pub fn disagreements(&self) -> Vec<(Disagreement, Option<u32>)> {
        let inner = self.inner.read().unwrap();
        let la = Self::labels_locked(&inner, &self.annotator_a);
        let lb = Self::labels_locked(&inner, &self.annotator_b);
        let both: std::collections::HashSet<&str> = lb.iter().map(|l| l.instance_id.as_str()).collect();
        let la: Vec<Label> = la.iter().filter(|l| both.contains(l.instance_id.as_str())).cloned().collect();
        let in_a: std::collections::HashSet<&str> = la.iter().map(|l| l.instance_id.as_str()).collect();
        let lb: Vec<Label> = lb.iter().filter(|l| in_a.contains(l.instance_id.as_str())).cloned().collect();
        disagreements(&la, &lb)
            .expect("aligned by construction")
            .into_iter()
            .map(|d| {
                let gold = inner.dataset.get(&d.instance_id).and_then(|i| i.gold);
                (d, gold)
            })
            .collect()
    }

    pub fn adjudicate(&self, instance_id: &str, class_id: u32, adjudicator: &str) -> Result<()> {
        let mut inner = self.inner.write().unwrap();
        let a = inner
            .latest
            .get(&(instance_id.to_string(), self.annotator_a.clone()))
            .map(|&p| inner.log[p].class_id);
        let b = inner
            .latest
            .get(&(instance_id.to_string(), self.annotator_b.clone()))
            .map(|&p| inner.log[p].class_id);
        inner.dataset.set_label_a(instance_id, a)?;
        inner.dataset.set_label_b(instance_id, b)?;
        inner.dataset.adjudicate(instance_id, class_id, adjudicator, &self.inventory)
    }

    /// Snapshot of the dataset with the live annotator labels filled in.
    pub fn export(&self) -> GoldDataset {
        let inner = self.inner.read().unwrap();
        let mut dataset = inner.dataset.clone();
        for item in inner.dataset.items() {
            let id = item.id();
            let pick = |ann: &str| {
                inner
                    .latest
                    .get(&(id.to_string(), ann.to_string()))
                    .map(|&p| inner.log[p].class_id)
            };
            dataset.set_label_a(id, pick(&self.annotator_a)).unwrap();
            dataset.set_label_b(id, pick(&self.annotator_b)).unwrap();
        }
        dataset
    }
}
