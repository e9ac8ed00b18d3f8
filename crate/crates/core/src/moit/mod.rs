//! Molecule and instruction records, template rendering, deterministic
//! splits and JSONL persistence.

mod enrich;
mod jsonl;
mod split;
mod templates;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::molrepr::{parse_smiles, Element, MolError, Molecule};

pub use enrich::{EnricherClient, OfflineEnricher, ENRICHMENT_PROMPT};
pub use jsonl::{read_jsonl, read_jsonl_str, write_jsonl, write_jsonl_string, Record};
pub use split::{deterministic_split, Split};
pub use templates::{
    build_instructions, format_value, render_caption_record, render_computed_qa, render_descriptive_qa, BuildSummary,
    CAPTION_PROMPT, PROMPT_SUFFIX, QA_TEMPLATES,
};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MoitError {
    #[error("molecule {id} has no {property} value")]
    MissingProperty { id: String, property: Property },
    #[error("molecule {0} has no description")]
    NoDescription(String),
    #[error("split ratios must be positive and sum to 1")]
    BadRatios,
    #[error("line {line}: {message}")]
    SchemaViolation { line: usize, message: String },
    #[error("io error: {0}")]
    Io(String),
    #[error("enricher failed: {0}")]
    Enricher(String),
    #[error("molecule {id}: {source}")]
    Molecule { id: String, source: MolError },
}

/// The eight computed properties.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    MolecularWeight,
    Logp,
    Tpsa,
    Complexity,
    Homo,
    Lumo,
    HomoLumoGap,
    ScfEnergy,
}

impl Property {
    pub const ALL: [Property; 8] = [
        Property::MolecularWeight,
        Property::Logp,
        Property::Tpsa,
        Property::Complexity,
        Property::Homo,
        Property::Lumo,
        Property::HomoLumoGap,
        Property::ScfEnergy,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Property::MolecularWeight => "molecular_weight",
            Property::Logp => "logp",
            Property::Tpsa => "tpsa",
            Property::Complexity => "complexity",
            Property::Homo => "homo",
            Property::Lumo => "lumo",
            Property::HomoLumoGap => "homo_lumo_gap",
            Property::ScfEnergy => "scf_energy",
        }
    }

    pub fn from_key(key: &str) -> Option<Property> {
        Property::ALL.into_iter().find(|p| p.key() == key)
    }

    /// Name used in prompts and responses.
    pub fn display_name(self) -> &'static str {
        match self {
            Property::MolecularWeight => "Molecular Weight",
            Property::Logp => "LogP",
            Property::Tpsa => "TPSA",
            Property::Complexity => "Complexity",
            Property::Homo => "HOMO",
            Property::Lumo => "LUMO",
            Property::HomoLumoGap => "HOMO-LUMO Gap",
            Property::ScfEnergy => "SCF Energy",
        }
    }

    /// Unit stored in molecule records; empty for unitless properties.
    pub fn unit(self) -> &'static str {
        match self {
            Property::MolecularWeight => "g/mol",
            Property::Logp | Property::Complexity => "",
            Property::Tpsa => "Å²",
            Property::Homo | Property::Lumo | Property::HomoLumoGap => "eV",
            Property::ScfEnergy => "10⁴ eV",
        }
    }

    /// ASCII spelling of [`Property::unit`] for generated text.
    pub fn text_unit(self) -> &'static str {
        match self {
            Property::Tpsa => "A^2",
            Property::ScfEnergy => "10^4 eV",
            other => other.unit(),
        }
    }
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropertyValue {
    pub value: f64,
    pub unit: String,
}

impl PropertyValue {
    pub fn new(property: Property, value: f64) -> Self {
        Self { value, unit: property.unit().to_string() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoleculeRecord {
    pub id: String,
    pub smiles: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elements: Option<Vec<Element>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coords: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub properties: BTreeMap<Property, PropertyValue>,
}

impl MoleculeRecord {
    pub fn new(id: impl Into<String>, smiles: impl Into<String>) -> Self {
        Self { id: id.into(), smiles: smiles.into(), elements: None, coords: None, description: None, properties: BTreeMap::new() }
    }

    pub fn with_property(mut self, p: Property, value: f64) -> Self {
        self.properties.insert(p, PropertyValue::new(p, value));
        self
    }

    pub fn with_description(mut self, d: impl Into<String>) -> Self {
        self.description = Some(d.into());
        self
    }

    pub fn has_coords(&self) -> bool {
        self.elements.is_some() && self.coords.is_some()
    }

    /// The molecule the encoder sees. With stored elements and coordinates
    /// those define the atoms (hydrogens included if listed); otherwise the
    /// SMILES graph is used and coordinates stay unset.
    pub fn to_molecule(&self) -> Result<Molecule, MoitError> {
        let wrap = |source| MoitError::Molecule { id: self.id.clone(), source };
        match (&self.elements, &self.coords) {
            (Some(el), Some(c)) => {
                let atoms = el.iter().map(|&e| crate::molrepr::Atom::new(e)).collect();
                let mut m = Molecule::new(self.id.clone(), atoms).with_coords(c.clone()).map_err(wrap)?;
                m.smiles = Some(self.smiles.clone());
                Ok(m)
            }
            _ => {
                let mut m = parse_smiles(&self.smiles).map_err(wrap)?;
                m.id = self.id.clone();
                Ok(m)
            }
        }
    }
}

impl Record for MoleculeRecord {
    fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        match (&self.elements, &self.coords) {
            (Some(e), Some(c)) if e.len() != c.len() => {
                return Err(format!("{} elements but {} coordinates", e.len(), c.len()));
            }
            (Some(_), None) | (None, Some(_)) => return Err("elements and coords must be given together".into()),
            _ => {}
        }
        if let Some(c) = &self.coords {
            if c.iter().flatten().any(|x| !x.is_finite()) {
                return Err("non-finite coordinate".into());
            }
        }
        for (p, v) in &self.properties {
            if v.unit != p.unit() {
                return Err(format!("{p} must be in {:?}, found {:?}", p.unit(), v.unit));
            }
            if !v.value.is_finite() {
                return Err(format!("{p} is not finite"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    ComputedQa,
    DescriptiveQa,
    Caption,
}

impl Task {
    pub fn key(self) -> &'static str {
        match self {
            Task::ComputedQa => "computed_qa",
            Task::DescriptiveQa => "descriptive_qa",
            Task::Caption => "caption",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstructionRecord {
    pub mol_id: String,
    pub task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub property: Option<Property>,
    pub prompt: String,
    pub response: String,
}

impl Record for InstructionRecord {
    fn validate(&self) -> Result<(), String> {
        match (self.task, self.property) {
            (Task::ComputedQa, None) => Err("computed_qa record without property".into()),
            (Task::ComputedQa, Some(_)) => {
                // The unit spelling may itself contain digits ("10^4 eV").
                let unit = self.property.map_or("", Property::text_unit);
                let body = if unit.is_empty() { self.response.clone() } else { self.response.replace(unit, "") };
                let literals = crate::evalsuite::count_numeric(&body);
                if literals == 1 {
                    Ok(())
                } else {
                    Err(format!("computed_qa response must contain exactly one number, found {literals}"))
                }
            }
            (_, Some(_)) => Err(format!("{} record must not carry a property", self.task.key())),
            _ => Ok(()),
        }
    }
}
