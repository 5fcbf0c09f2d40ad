use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use super::{class_counts, now_secs, Label};
use crate::corpus::{find_target_instances, DelimiterSet, Instance, InstanceRecord, Sentence, Tokenizer};
use crate::error::{list_ids, Error, Result};
use crate::schema::SenseInventory;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Adjudication {
    pub class_id: u32,
    pub adjudicator: String,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoldItem {
    pub instance: Instance,
    pub label_a: Option<u32>,
    pub label_b: Option<u32>,
    /// Adjudicated label, if any decision was recorded.
    pub gold: Option<u32>,
    /// Every adjudication decision, oldest first.
    pub adjudications: Vec<Adjudication>,
}

impl GoldItem {
    pub fn new(instance: Instance) -> Self {
        GoldItem {
            instance,
            label_a: None,
            label_b: None,
            gold: None,
            adjudications: Vec::new(),
        }
    }

    /// The adjudicated label, or the shared label when both annotators agree.
    pub fn gold_label(&self) -> Option<u32> {
        self.gold.or(match (self.label_a, self.label_b) {
            (Some(a), Some(b)) if a == b => Some(a),
            _ => None,
        })
    }

    pub fn id(&self) -> &str {
        &self.instance.id
    }
}

/// One line of the gold dataset JSONL format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldRecord {
    pub id: String,
    pub tokens: Vec<String>,
    pub target_index: usize,
    pub phrasal_start: usize,
    pub phrasal_end: usize,
    pub label_a: Option<u32>,
    pub label_b: Option<u32>,
    pub gold: Option<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub adjudications: Vec<Adjudication>,
}

impl GoldRecord {
    fn into_item(self) -> Result<GoldItem> {
        let instance = InstanceRecord {
            id: self.id.clone(),
            doc_id: self.id.split(':').next().unwrap_or_default().to_string(),
            sent_index: 0,
            tokens: self.tokens,
            target_index: self.target_index,
            phrasal_start: self.phrasal_start,
            phrasal_end: self.phrasal_end,
        }
        .into_instance()?;
        Ok(GoldItem {
            instance,
            label_a: self.label_a,
            label_b: self.label_b,
            gold: self.gold,
            adjudications: self.adjudications,
        })
    }

    fn from_item(item: &GoldItem) -> Self {
        let record = item.instance.to_record();
        GoldRecord {
            id: record.id,
            tokens: record.tokens,
            target_index: record.target_index,
            phrasal_start: record.phrasal_start,
            phrasal_end: record.phrasal_end,
            label_a: item.label_a,
            label_b: item.label_b,
            gold: item.gold_label(),
            adjudications: item.adjudications.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GoldDataset {
    items: Vec<GoldItem>,
    index: HashMap<String, usize>,
}

impl GoldDataset {
    pub fn new(items: Vec<GoldItem>) -> Result<Self> {
        let mut index = HashMap::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            if index.insert(item.id().to_string(), i).is_some() {
                return Err(Error::domain(format!("duplicate instance id {}", item.id())));
            }
        }
        Ok(GoldDataset { items, index })
    }

    pub fn from_instances(instances: Vec<Instance>) -> Result<Self> {
        Self::new(instances.into_iter().map(GoldItem::new).collect())
    }

    pub fn items(&self) -> &[GoldItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&GoldItem> {
        self.index.get(id).map(|&i| &self.items[i])
    }

    fn get_mut(&mut self, id: &str) -> Result<&mut GoldItem> {
        match self.index.get(id) {
            Some(&i) => Ok(&mut self.items[i]),
            None => Err(Error::domain(format!("unknown instance {id}"))),
        }
    }

    pub fn set_label_a(&mut self, id: &str, class_id: Option<u32>) -> Result<()> {
        self.get_mut(id)?.label_a = class_id;
        Ok(())
    }

    pub fn set_label_b(&mut self, id: &str, class_id: Option<u32>) -> Result<()> {
        self.get_mut(id)?.label_b = class_id;
        Ok(())
    }

    /// Records the final label of an instance. Both annotator labels must be
    /// present. The latest decision wins; all decisions are kept.
    pub fn adjudicate(&mut self, id: &str, class_id: u32, adjudicator: &str, inventory: &SenseInventory) -> Result<()> {
        inventory.class(class_id)?;
        let item = self.get_mut(id)?;
        if item.label_a.is_none() || item.label_b.is_none() {
            return Err(Error::domain(format!(
                "instance {id} must be labeled by both annotators before adjudication"
            )));
        }
        item.gold = Some(class_id);
        item.adjudications.push(Adjudication {
            class_id,
            adjudicator: adjudicator.to_string(),
            timestamp: now_secs(),
        });
        Ok(())
    }

    /// `(id, gold)` for every item; fails listing the ids without a gold label.
    pub fn gold_labels(&self) -> Result<Vec<(&str, u32)>> {
        let missing: Vec<&str> = self
            .items
            .iter()
            .filter(|i| i.gold_label().is_none())
            .map(|i| i.id())
            .collect();
        if !missing.is_empty() {
            return Err(Error::domain(format!(
                "{} instance(s) have no gold label: {}",
                missing.len(),
                list_ids(&missing)
            )));
        }
        Ok(self.items.iter().map(|i| (i.id(), i.gold_label().unwrap())).collect())
    }

    /// Annotator labels as they would appear in a label store, for agreement
    /// computation.
    pub fn annotator_labels(&self, name_a: &str, name_b: &str) -> (Vec<Label>, Vec<Label>) {
        let collect = |name: &str, pick: fn(&GoldItem) -> Option<u32>| {
            self.items
                .iter()
                .filter_map(|item| {
                    pick(item).map(|c| Label {
                        instance_id: item.id().to_string(),
                        annotator: name.to_string(),
                        class_id: c,
                        timestamp: 0,
                    })
                })
                .collect::<Vec<_>>()
        };
        (collect(name_a, |i| i.label_a), collect(name_b, |i| i.label_b))
    }

    pub fn validate_labels(&self, inventory: &SenseInventory) -> Result<()> {
        for item in &self.items {
            for c in [item.label_a, item.label_b, item.gold].into_iter().flatten() {
                if !inventory.contains(c) {
                    return Err(Error::domain(format!("instance {}: unknown class id {c}", item.id())));
                }
            }
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut items = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: GoldRecord = serde_json::from_str(&line)
                .map_err(|e| Error::format(format!("line {}: {e}", lineno + 1)))?;
            items.push(record.into_item()?);
        }
        Self::new(items)
    }

    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> Result<()> {
        for item in &self.items {
            serde_json::to_writer(&mut writer, &GoldRecord::from_item(item))?;
            writer.write_all(b"\n")?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    /// Imports a delimited table (e.g. an externally published dataset) via
    /// an explicit column mapping. Each row must contain the target word; the
    /// `target_occurrence` column (0-based) picks among repeated occurrences.
    pub fn import_table<R: Read>(
        reader: R,
        mapping: &FieldMapping,
        delimiters: &DelimiterSet,
        tokenizer: Tokenizer,
    ) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(mapping.delimiter)
            .flexible(true)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::format(format!("table header: {e}")))?
            .clone();
        let column = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::format(format!("column '{name}' not found in table header")))
        };
        let optional = |name: &Option<String>| name.as_deref().map(column).transpose();
        let text_col = column(&mapping.text)?;
        let gold_col = optional(&mapping.gold)?;
        let id_col = optional(&mapping.id)?;
        let a_col = optional(&mapping.label_a)?;
        let b_col = optional(&mapping.label_b)?;
        let occ_col = optional(&mapping.target_occurrence)?;

        let parse_label = |row: usize, raw: &str| -> Result<Option<u32>> {
            let raw = raw.trim();
            if raw.is_empty() {
                return Ok(None);
            }
            raw.parse::<u32>()
                .map(Some)
                .map_err(|_| Error::format(format!("row {row}: label '{raw}' is not a class id")))
        };

        let mut items = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| Error::format(format!("row {}: {e}", row + 1)))?;
            let field = |col: Option<usize>| col.and_then(|c| record.get(c)).unwrap_or("");
            let text = field(Some(text_col));
            let doc_id = match id_col {
                Some(_) => field(id_col).trim().to_string(),
                None => mapping.doc_prefix.clone(),
            };
            let sentence = std::sync::Arc::new(Sentence::new(doc_id.clone(), row, tokenizer.tokenize(text))
                .map_err(|e| Error::format(format!("row {}: {e}", row + 1)))?);
            let found = find_target_instances(&sentence, &mapping.target, delimiters)?;
            let occurrence = match occ_col {
                Some(_) => field(occ_col)
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| Error::format(format!("row {}: bad target occurrence", row + 1)))?,
                None => 0,
            };
            let mut instance = found.into_iter().nth(occurrence).ok_or_else(|| {
                Error::format(format!("row {}: target '{}' not found", row + 1, mapping.target))
            })?;
            if id_col.is_some() {
                instance.id = doc_id;
            } else {
                instance.id = format!("{}:{}", mapping.doc_prefix, row);
            }
            items.push(GoldItem {
                instance,
                label_a: parse_label(row + 1, field(a_col))?,
                label_b: parse_label(row + 1, field(b_col))?,
                gold: parse_label(row + 1, field(gold_col))?,
                adjudications: Vec::new(),
            });
        }
        Self::new(items)
    }
}

/// Column names for [`GoldDataset::import_table`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldMapping {
    pub delimiter: u8,
    pub target: String,
    pub text: String,
    pub id: Option<String>,
    pub gold: Option<String>,
    pub label_a: Option<String>,
    pub label_b: Option<String>,
    pub target_occurrence: Option<String>,
    pub doc_prefix: String,
}

impl Default for FieldMapping {
    fn default() -> Self {
        FieldMapping {
            delimiter: b'\t',
            target: "sich".to_string(),
            text: "sentence".to_string(),
            id: None,
            gold: Some("class".to_string()),
            label_a: None,
            label_b: None,
            target_occurrence: None,
            doc_prefix: "import".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassFrequencies {
    pub counts: BTreeMap<u32, usize>,
    pub total: usize,
}

impl ClassFrequencies {
    pub fn get(&self, class_id: u32) -> usize {
        self.counts.get(&class_id).copied().unwrap_or(0)
    }
}

pub fn class_frequencies(gold: &GoldDataset) -> Result<ClassFrequencies> {
    if gold.is_empty() {
        return Err(Error::domain("gold dataset is empty"));
    }
    let labels = gold.gold_labels()?;
    Ok(ClassFrequencies {
        total: labels.len(),
        counts: class_counts(labels.into_iter().map(|(_, c)| c)),
    })
}
