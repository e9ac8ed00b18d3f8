use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::enrich::EnricherClient;
use super::{InstructionRecord, MoitError, MoleculeRecord, Property, Task};

/// Closing clause of every computed-property prompt.
pub const PROMPT_SUFFIX: &str = "If uncertain, provide an estimate. Respond with the numerical value only.";

/// Paraphrases for computed-property questions; `{name}` is replaced by the
/// property's display name.
pub const QA_TEMPLATES: [&str; 4] = [
    "Please provide the {name} value for this molecule.",
    "Could you give me the {name} value of this molecule?",
    "What is the {name} of this molecule?",
    "I would like to know the {name} of the input molecule.",
];

pub const CAPTION_PROMPT: &str = "Describe the input molecule.";

fn decimals(p: Property, value: f64) -> usize {
    match p {
        Property::MolecularWeight | Property::Logp | Property::Tpsa => 2,
        Property::Complexity => 0,
        Property::Homo | Property::Lumo | Property::HomoLumoGap => 3,
        Property::ScfEnergy => {
            // Four significant digits.
            if value == 0.0 {
                3
            } else {
                (3 - value.abs().log10().floor() as i64).max(0) as usize
            }
        }
    }
}

/// Formats `value` at the property's table precision, or with the shortest
/// exact representation when the table precision would change the value.
pub fn format_value(p: Property, value: f64) -> String {
    let s = format!("{:.*}", decimals(p, value), value);
    if s.parse::<f64>() == Ok(value) {
        s
    } else {
        format!("{value}")
    }
}

fn variant(seed: u64, parts: &[&str], n: usize) -> usize {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    let d = h.finalize();
    (u64::from_le_bytes(d[..8].try_into().expect("8 bytes")) % n as u64) as usize
}

pub fn render_computed_qa(rec: &MoleculeRecord, property: Property, variant_seed: u64) -> Result<InstructionRecord, MoitError> {
    let value = rec
        .properties
        .get(&property)
        .ok_or_else(|| MoitError::MissingProperty { id: rec.id.clone(), property })?
        .value;
    let name = property.display_name();
    let template = QA_TEMPLATES[variant(variant_seed, &[&rec.id, property.key()], QA_TEMPLATES.len())];
    let prompt = format!("{} {PROMPT_SUFFIX}", template.replace("{name}", name));
    let unit = property.text_unit();
    let value = format_value(property, value);
    let response = if unit.is_empty() {
        format!("The {name} for the input molecule is {value}.")
    } else {
        format!("The {name} for the input molecule is {value} {unit}.")
    };
    Ok(InstructionRecord { mol_id: rec.id.clone(), task: Task::ComputedQa, property: Some(property), prompt, response })
}

pub fn render_descriptive_qa(rec: &MoleculeRecord, enricher: &dyn EnricherClient, count: usize) -> Result<Vec<InstructionRecord>, MoitError> {
    let description = rec.description.as_deref().ok_or_else(|| MoitError::NoDescription(rec.id.clone()))?;
    let pairs = enricher.qa_pairs(description, count)?;
    Ok(pairs
        .into_iter()
        .take(count)
        .map(|(prompt, response)| InstructionRecord { mol_id: rec.id.clone(), task: Task::DescriptiveQa, property: None, prompt, response })
        .collect())
}

pub fn render_caption_record(rec: &MoleculeRecord) -> Result<InstructionRecord, MoitError> {
    let description = rec.description.clone().ok_or_else(|| MoitError::NoDescription(rec.id.clone()))?;
    Ok(InstructionRecord {
        mol_id: rec.id.clone(),
        task: Task::Caption,
        property: None,
        prompt: CAPTION_PROMPT.to_string(),
        response: description,
    })
}

/// Record counts of a build, by task and by property.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BuildSummary {
    pub by_task: BTreeMap<Task, usize>,
    pub by_property: BTreeMap<Property, usize>,
}

impl BuildSummary {
    pub fn of(records: &[InstructionRecord]) -> Self {
        let mut s = Self::default();
        for r in records {
            *s.by_task.entry(r.task).or_default() += 1;
            if let Some(p) = r.property {
                *s.by_property.entry(p).or_default() += 1;
            }
        }
        s
    }

    pub fn total(&self) -> usize {
        self.by_task.values().sum()
    }
}

/// Every instruction derivable from `molecules`, in input order: one
/// computed-property record per stored property, then (with a description)
/// up to `descriptive_count` descriptive QA records and a caption record.
pub fn build_instructions(
    molecules: &[MoleculeRecord],
    seed: u64,
    enricher: &dyn EnricherClient,
    descriptive_count: usize,
) -> Result<Vec<InstructionRecord>, MoitError> {
    let mut out = Vec::new();
    for rec in molecules {
        for &p in rec.properties.keys() {
            out.push(render_computed_qa(rec, p, seed)?);
        }
        if rec.description.is_some() {
            out.extend(render_descriptive_qa(rec, enricher, descriptive_count)?);
            out.push(render_caption_record(rec)?);
        }
    }
    Ok(out)
}
