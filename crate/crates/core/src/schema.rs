//! Sense inventory: the classes a function word can be labeled with and the
//! trinary semantic features that characterize each class.
//!
//! The built-in inventory covers the German reflexive pronoun *sich*
//! ([`SenseInventory::sich`]). Other inventories can be loaded from JSON of
//! the form
//!
//! ```json
//! {"classes":[{"id":1,"name":"Inherent reflexives",
//!              "features":{"predictable":"+","agentive":"±","stressable":"-",
//!                          "lassen":"-","disposition":"±"}}]}
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureName {
    Predictable,
    Agentive,
    Stressable,
    Lassen,
    Disposition,
}

impl FeatureName {
    pub const ALL: [FeatureName; 5] = [
        FeatureName::Predictable,
        FeatureName::Agentive,
        FeatureName::Stressable,
        FeatureName::Lassen,
        FeatureName::Disposition,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureName::Predictable => "predictable",
            FeatureName::Agentive => "agentive",
            FeatureName::Stressable => "stressable",
            FeatureName::Lassen => "lassen",
            FeatureName::Disposition => "disposition",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for FeatureName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureName::ALL
            .into_iter()
            .find(|f| f.as_str() == s.trim().to_lowercase())
            .ok_or_else(|| Error::domain(format!("unknown feature '{s}'")))
    }
}

/// Cell value of the feature table. `Neutral` means both values occur
/// depending on context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureValue {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
    #[serde(rename = "±")]
    Neutral,
}

impl FeatureValue {
    /// Whether an instance with the observed boolean value is compatible with
    /// this cell.
    pub fn admits(self, value: bool) -> bool {
        match self {
            FeatureValue::Plus => value,
            FeatureValue::Minus => !value,
            FeatureValue::Neutral => true,
        }
    }

    /// Binary label used when predicting a feature: `+1`, `-1`, or `None` for
    /// neutral cells.
    pub fn as_label(self) -> Option<i64> {
        match self {
            FeatureValue::Plus => Some(1),
            FeatureValue::Minus => Some(-1),
            FeatureValue::Neutral => None,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            FeatureValue::Plus => "+",
            FeatureValue::Minus => "-",
            FeatureValue::Neutral => "±",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SenseClass {
    pub id: u32,
    pub name: String,
    pub features: BTreeMap<FeatureName, FeatureValue>,
}

impl SenseClass {
    pub fn feature(&self, feature: FeatureName) -> FeatureValue {
        // Totality is checked when the inventory is constructed.
        self.features[&feature]
    }
}

/// A boolean answer for every feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FeatureAssignment([bool; 5]);

impl FeatureAssignment {
    pub fn new(predictable: bool, agentive: bool, stressable: bool, lassen: bool, disposition: bool) -> Self {
        FeatureAssignment([predictable, agentive, stressable, lassen, disposition])
    }

    pub fn from_map(map: &BTreeMap<FeatureName, bool>) -> Result<Self> {
        let mut values = [false; 5];
        for feature in FeatureName::ALL {
            values[feature.index()] = *map
                .get(&feature)
                .ok_or_else(|| Error::domain(format!("assignment is missing feature '{feature}'")))?;
        }
        Ok(FeatureAssignment(values))
    }

    pub fn get(&self, feature: FeatureName) -> bool {
        self.0[feature.index()]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SenseInventory {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
    classes: Vec<SenseClass>,
}

pub const SICH_INVENTORY_VERSION: &str = "sich-8class-v1";

impl SenseInventory {
    pub fn new(classes: Vec<SenseClass>, version: Option<String>) -> Result<Self> {
        let inventory = SenseInventory { version, classes };
        inventory.validate()?;
        Ok(inventory)
    }

    /// The eight classes of the reflexive pronoun *sich*.
    pub fn sich() -> Self {
        use FeatureValue::{Minus as M, Neutral as N, Plus as P};
        let rows: [(&str, [FeatureValue; 5]); 8] = [
            ("Inherent reflexives", [P, N, M, M, N]),
            ("Anti-causatives", [P, M, M, M, N]),
            ("Change in posture", [P, N, M, M, M]),
            ("Typically self-directed", [M, P, M, M, M]),
            ("Typically other-directed", [M, P, P, M, M]),
            ("Dispositional middle", [P, M, M, P, P]),
            ("Episodic middle", [P, P, M, P, M]),
            ("Reciprocals", [M, N, N, M, N]),
        ];
        let classes = rows
            .iter()
            .enumerate()
            .map(|(i, (name, values))| SenseClass {
                id: i as u32 + 1,
                name: (*name).to_string(),
                features: FeatureName::ALL.into_iter().zip(values.iter().copied()).collect(),
            })
            .collect();
        SenseInventory {
            version: Some(SICH_INVENTORY_VERSION.to_string()),
            classes,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::domain("inventory has no classes"));
        }
        let mut seen = BTreeSet::new();
        for class in &self.classes {
            if !seen.insert(class.id) {
                return Err(Error::domain(format!("duplicate class id {}", class.id)));
            }
            if let Some(missing) = FeatureName::ALL.iter().find(|f| !class.features.contains_key(f)) {
                return Err(Error::domain(format!(
                    "class {} has no value for feature '{missing}'",
                    class.id
                )));
            }
        }
        Ok(())
    }

    pub fn classes(&self) -> &[SenseClass] {
        &self.classes
    }

    pub fn class_ids(&self) -> Vec<u32> {
        self.classes.iter().map(|c| c.id).collect()
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn contains(&self, class_id: u32) -> bool {
        self.get(class_id).is_some()
    }

    pub fn get(&self, class_id: u32) -> Option<&SenseClass> {
        self.classes.iter().find(|c| c.id == class_id)
    }

    pub fn class(&self, class_id: u32) -> Result<&SenseClass> {
        self.get(class_id)
            .ok_or_else(|| Error::domain(format!("unknown class id {class_id}")))
    }

    pub fn feature_value(&self, class_id: u32, feature: FeatureName) -> Result<FeatureValue> {
        Ok(self.class(class_id)?.feature(feature))
    }

    /// Every class whose table row admits the assignment. The mapping from
    /// features to classes is underspecified, so the result may hold several
    /// ids or none.
    pub fn classes_compatible_with(&self, assignment: &FeatureAssignment) -> BTreeSet<u32> {
        self.classes
            .iter()
            .filter(|c| FeatureName::ALL.iter().all(|&f| c.feature(f).admits(assignment.get(f))))
            .map(|c| c.id)
            .collect()
    }

    pub fn neutral_classes(&self, feature: FeatureName) -> BTreeSet<u32> {
        self.classes
            .iter()
            .filter(|c| c.feature(feature) == FeatureValue::Neutral)
            .map(|c| c.id)
            .collect()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let inventory: SenseInventory = serde_json::from_str(text)?;
        inventory.validate()?;
        Ok(inventory)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("inventory serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

impl Default for SenseInventory {
    fn default() -> Self {
        SenseInventory::sich()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use FeatureName::*;

    #[test]
    fn table_cells() {
        let inv = SenseInventory::sich();
        assert_eq!(inv.feature_value(1, Predictable).unwrap(), FeatureValue::Plus);
        assert_eq!(inv.feature_value(6, Lassen).unwrap(), FeatureValue::Plus);
        assert_eq!(inv.feature_value(8, Agentive).unwrap(), FeatureValue::Neutral);
        assert!(matches!(inv.feature_value(9, Lassen), Err(Error::Domain(_))));
        assert!(inv.feature_value(0, Lassen).is_err());
    }

    #[test]
    fn inventory_shape() {
        let inv = SenseInventory::sich();
        assert_eq!(inv.len(), 8);
        assert_eq!(inv.class(1).unwrap().name, "Inherent reflexives");
        assert_eq!(inv.class(8).unwrap().name, "Reciprocals");
        assert_eq!(inv.class_ids(), (1..=8).collect::<Vec<_>>());
    }

    #[test]
    fn compatible_classes() {
        let inv = SenseInventory::sich();
        let set = |ids: &[u32]| ids.iter().copied().collect::<BTreeSet<_>>();
        assert_eq!(
            inv.classes_compatible_with(&FeatureAssignment::new(true, false, false, false, false)),
            set(&[1, 2, 3])
        );
        assert_eq!(
            inv.classes_compatible_with(&FeatureAssignment::new(true, true, false, true, false)),
            set(&[7])
        );
        assert_eq!(
            inv.classes_compatible_with(&FeatureAssignment::new(false, true, false, false, false)),
            set(&[4, 8])
        );
        // predictable and stressable together fit no row
        assert!(inv
            .classes_compatible_with(&FeatureAssignment::new(true, true, true, true, true))
            .is_empty());
    }

    #[test]
    fn neutral_columns() {
        let inv = SenseInventory::sich();
        assert!(inv.neutral_classes(Predictable).is_empty());
        assert!(inv.neutral_classes(Lassen).is_empty());
        assert_eq!(inv.neutral_classes(Agentive), [1, 3, 8].into_iter().collect());
        assert_eq!(inv.neutral_classes(Stressable), [8].into_iter().collect());
        assert_eq!(inv.neutral_classes(Disposition), [1, 2, 8].into_iter().collect());
    }

    #[test]
    fn every_class_admits_its_own_rows() {
        // Enumerate all 32 assignments; each one consistent with a class's
        // non-neutral cells must list that class.
        let inv = SenseInventory::sich();
        for bits in 0u32..32 {
            let a = FeatureAssignment::new(bits & 1 != 0, bits & 2 != 0, bits & 4 != 0, bits & 8 != 0, bits & 16 != 0);
            let compatible = inv.classes_compatible_with(&a);
            for class in inv.classes() {
                let consistent = FeatureName::ALL.iter().all(|&f| class.feature(f).admits(a.get(f)));
                assert_eq!(consistent, compatible.contains(&class.id));
            }
        }
    }

    #[test]
    fn json_round_trip() {
        let inv = SenseInventory::sich();
        let json = inv.to_json();
        assert!(json.contains("\"±\""));
        assert!(json.contains("\"predictable\": \"+\""));
        assert_eq!(SenseInventory::from_json(&json).unwrap(), inv);
    }

    #[test]
    fn rejects_incomplete_or_duplicate_classes() {
        let partial = r#"{"classes":[{"id":1,"name":"x","features":{"predictable":"+"}}]}"#;
        assert!(matches!(SenseInventory::from_json(partial), Err(Error::Domain(_))));

        let row = r#"{"id":1,"name":"x","features":{"predictable":"+","agentive":"-","stressable":"-","lassen":"-","disposition":"±"}}"#;
        let dup = format!(r#"{{"classes":[{row},{row}]}}"#);
        assert!(SenseInventory::from_json(&dup).is_err());
        let single = format!(r#"{{"classes":[{row}]}}"#);
        assert_eq!(SenseInventory::from_json(&single).unwrap().len(), 1);
    }

    #[test]
    fn assignment_from_partial_map_fails() {
        let mut map = BTreeMap::new();
        map.insert(Predictable, true);
        assert!(FeatureAssignment::from_map(&map).is_err());
        for f in FeatureName::ALL {
            map.insert(f, false);
        }
        assert!(FeatureAssignment::from_map(&map).is_ok());
    }
}
