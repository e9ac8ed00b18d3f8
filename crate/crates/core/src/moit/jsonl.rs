use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::MoitError;

/// A JSONL row type with invariants beyond its schema.
pub trait Record: Serialize + DeserializeOwned {
    fn validate(&self) -> Result<(), String>;
}

pub fn write_jsonl_string<T: Record>(records: &[T]) -> Result<String, MoitError> {
    let mut out = String::new();
    for (i, r) in records.iter().enumerate() {
        r.validate().map_err(|message| MoitError::SchemaViolation { line: i + 1, message })?;
        out.push_str(&serde_json::to_string(r).map_err(|e| MoitError::SchemaViolation { line: i + 1, message: e.to_string() })?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl<T: Record>(path: impl AsRef<Path>, records: &[T]) -> Result<(), MoitError> {
    let text = write_jsonl_string(records)?;
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| MoitError::Io(format!("{}: {e}", path.display())))?;
    f.write_all(text.as_bytes()).map_err(|e| MoitError::Io(format!("{}: {e}", path.display())))
}

/// Parses one record per non-blank line; line numbers are 1-based.
pub fn read_jsonl_str<T: Record>(text: &str) -> Result<Vec<T>, MoitError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: T = serde_json::from_str(line).map_err(|e| MoitError::SchemaViolation { line: i + 1, message: e.to_string() })?;
        rec.validate().map_err(|message| MoitError::SchemaViolation { line: i + 1, message })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_jsonl<T: Record>(path: impl AsRef<Path>) -> Result<Vec<T>, MoitError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| MoitError::Io(format!("{}: {e}", path.display())))?;
    read_jsonl_str(&text)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::molrepr::Element;
    use crate::moit::{InstructionRecord, MoleculeRecord, Property, Task};

    fn mixed(n: usize) -> Vec<MoleculeRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        (0..n)
            .map(|i| {
                let mut r = MoleculeRecord::new(format!("m{i}"), "CC(=O)O");
                if i % 2 == 0 {
                    r = r.with_property(Property::Homo, rng.gen_range(-9.0..-4.0)).with_property(Property::MolecularWeight, 60.052);
                }
                if i % 3 == 0 {
                    r = r.with_description(format!("Molecule number {i}. It has \"quotes\" and \u{e9}."));
                }
                if i % 5 == 0 {
                    r.elements = Some(vec![Element::C, Element::O]);
                    r.coords = Some(vec![[rng.gen(), 1.0 / 3.0, -0.0], [1e-300, 2.5, 7.0]]);
                }
                r
            })
            .collect()
    }

    #[test]
    fn round_trip_is_exact() {
        let recs = mixed(100);
        let text = write_jsonl_string(&recs).unwrap();
        assert_eq!(text.lines().count(), 100);
        let back: Vec<MoleculeRecord> = read_jsonl_str(&text).unwrap();
        assert_eq!(back, recs);
        assert_eq!(write_jsonl_string(&back).unwrap(), text);
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        let text = "{\"id\":\"a\",\"smiles\":\"C\"}\n{\"id\":\"b\",\"smiles\":\"C\",\"colour\":\"red\"}\n";
        match read_jsonl_str::<MoleculeRecord>(text) {
            Err(MoitError::SchemaViolation { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("colour"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invariant_violation_is_rejected() {
        let text = "{\"mol_id\":\"a\",\"task\":\"computed_qa\",\"prompt\":\"p\",\"response\":\"r\"}\n";
        assert!(matches!(read_jsonl_str::<InstructionRecord>(text), Err(MoitError::SchemaViolation { line: 1, .. })));
        let ok = "{\"mol_id\":\"a\",\"task\":\"caption\",\"prompt\":\"p\",\"response\":\"r\"}\n";
        assert_eq!(read_jsonl_str::<InstructionRecord>(ok).unwrap()[0].task, Task::Caption);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let recs = mixed(10);
        write_jsonl(&p, &recs).unwrap();
        let first = std::fs::read(&p).unwrap();
        write_jsonl(&p, &recs).unwrap();
        assert_eq!(first, std::fs::read(&p).unwrap());
        assert_eq!(read_jsonl::<MoleculeRecord>(&p).unwrap(), recs);
    }
}
