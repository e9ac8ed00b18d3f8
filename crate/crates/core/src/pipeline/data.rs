use std::collections::HashMap;

use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::molrepr::{synthetic_embed, MolError, Molecule};
use crate::moit::{InstructionRecord, MoleculeRecord};

/// What to do with a record that has no stored conformation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ConformerPolicy {
    /// Fail with `CoordsUnset`.
    Require,
    /// Place atoms with [`synthetic_embed`], seeded by the record id.
    #[default]
    Synthetic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairExample {
    pub id: String,
    pub molecule: Molecule,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstructionExample {
    pub id: String,
    pub molecule: Molecule,
    pub smiles: String,
    pub prompt: String,
    pub response: String,
}

fn id_seed(seed: u64, id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

pub(crate) fn conformer(rec: &MoleculeRecord, policy: ConformerPolicy, seed: u64) -> Result<Molecule, PipelineError> {
    let m = rec.to_molecule()?;
    if m.coords.is_some() {
        return Ok(m);
    }
    match policy {
        ConformerPolicy::Require => Err(MolError::CoordsUnset.into()),
        ConformerPolicy::Synthetic => {
            log::warn!("molecule {} has no coordinates; using a synthetic placement", rec.id);
            Ok(synthetic_embed(&m, id_seed(seed, &rec.id))?)
        }
    }
}

/// Molecule-description pairs from every record that has a description.
pub fn pair_examples(records: &[MoleculeRecord], policy: ConformerPolicy, seed: u64) -> Result<Vec<PairExample>, PipelineError> {
    let out: Vec<PairExample> = records
        .iter()
        .filter_map(|r| r.description.as_ref().map(|d| (r, d)))
        .map(|(r, d)| Ok(PairExample { id: r.id.clone(), molecule: conformer(r, policy, seed)?, text: d.clone() }))
        .collect::<Result<_, PipelineError>>()?;
    if out.is_empty() {
        return Err(PipelineError::Data("no molecule record carries a description".into()));
    }
    Ok(out)
}

/// Joins instruction records to their molecules by id.
pub fn instruction_examples(
    molecules: &[MoleculeRecord],
    instructions: &[InstructionRecord],
    policy: ConformerPolicy,
    seed: u64,
) -> Result<Vec<InstructionExample>, PipelineError> {
    let by_id: HashMap<&str, &MoleculeRecord> = molecules.iter().map(|m| (m.id.as_str(), m)).collect();
    let mut cache: HashMap<&str, Molecule> = HashMap::new();
    let mut out = Vec::with_capacity(instructions.len());
    for ins in instructions {
        let rec = by_id
            .get(ins.mol_id.as_str())
            .ok_or_else(|| PipelineError::Data(format!("instruction refers to unknown molecule {}", ins.mol_id)))?;
        let molecule = match cache.get(rec.id.as_str()) {
            Some(m) => m.clone(),
            None => {
                let m = conformer(rec, policy, seed)?;
                cache.insert(rec.id.as_str(), m.clone());
                m
            }
        };
        out.push(InstructionExample {
            id: ins.mol_id.clone(),
            molecule,
            smiles: rec.smiles.clone(),
            prompt: ins.prompt.clone(),
            response: ins.response.clone(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moit::Task;

    #[test]
    fn synthetic_fallback_is_deterministic() {
        let recs = vec![MoleculeRecord::new("a", "CCO").with_description("ethanol"), MoleculeRecord::new("b", "CC")];
        let p1 = pair_examples(&recs, ConformerPolicy::Synthetic, 3).unwrap();
        let p2 = pair_examples(&recs, ConformerPolicy::Synthetic, 3).unwrap();
        assert_eq!(p1.len(), 1);
        assert_eq!(p1, p2);
        assert!(matches!(
            pair_examples(&recs, ConformerPolicy::Require, 3),
            Err(PipelineError::Molecule(MolError::CoordsUnset))
        ));
    }

    #[test]
    fn join_by_id() {
        let mols = vec![MoleculeRecord::new("a", "CCO")];
        let ins = InstructionRecord {
            mol_id: "a".into(),
            task: Task::Caption,
            property: None,
            prompt: "Describe the input molecule.".into(),
            response: "ethanol".into(),
        };
        let ex = instruction_examples(&mols, std::slice::from_ref(&ins), ConformerPolicy::Synthetic, 0).unwrap();
        assert_eq!(ex[0].smiles, "CCO");
        let orphan = InstructionRecord { mol_id: "zz".into(), ..ins };
        assert!(instruction_examples(&mols, &[orphan], ConformerPolicy::Synthetic, 0).is_err());
    }
}
