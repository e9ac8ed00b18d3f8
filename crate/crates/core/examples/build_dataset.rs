//! Render instruction records from molecule records and split by molecule.
//!
//! ```bash
//! cargo run -p molm --example build_dataset
//! ```

use molm::moit::{
    build_instructions, deterministic_split, read_jsonl, write_jsonl_string, BuildSummary, MoleculeRecord,
    OfflineEnricher, Property,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut records: Vec<MoleculeRecord> = read_jsonl(concat!(env!("CARGO_MANIFEST_DIR"), "/data/molecules.jsonl"))?;
    records.push(
        MoleculeRecord::new("extra", "CC(=O)O")
            .with_property(Property::MolecularWeight, 60.05)
            .with_description("The molecule is a simple carboxylic acid. It is found in vinegar."),
    );
    let instructions = build_instructions(&records, 0, &OfflineEnricher, 5)?;
    let summary = BuildSummary::of(&instructions);
    println!("{} instruction records", summary.total());
    for (task, n) in &summary.by_task {
        println!("  {}: {n}", task.key());
    }
    let last = write_jsonl_string(&instructions[instructions.len() - 3..])?;
    print!("{last}");

    let split = deterministic_split(records.iter().map(|r| r.id.as_str()), (0.8, 0.1, 0.1), 0)?;
    println!("split: {} train, {} valid, {} test", split.train.len(), split.valid.len(), split.test.len());
    Ok(())
}
