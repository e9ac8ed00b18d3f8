//! The three stage-1 objectives on one small batch.
//!
//! ```bash
//! cargo run -p molm --example stage1_losses
//! ```

use molm::autograd::Tape;
use molm::molrepr::{parse_smiles, synthetic_embed};
use molm::objectives::{stage1_total, PairBatch, Stage1Weights, UniformDerangement};
use molm::pipeline::{ModelConfig, Models, StageConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let models = Models::new(ModelConfig::default(), 0)?;
    let data = [("CCO", "ethanol, a primary alcohol"), ("CC(=O)O", "acetic acid"), ("c1ccccc1", "benzene, an aromatic ring")];
    let mut batch = PairBatch { atoms: Vec::new(), texts: Vec::new() };
    for (smiles, text) in data {
        let mol = synthetic_embed(&parse_smiles(smiles)?, 0)?;
        batch.atoms.push(models.encoder.encode(&models.store, &mol)?);
        batch.texts.push(models.lm.vocab().encode(text)?);
    }
    let mut tape = Tape::new();
    let t = StageConfig::stage1().temperature;
    let l = stage1_total(&mut tape, &models.store, &models.projector, &batch, Stage1Weights::default(), t, &UniformDerangement, 0)?;
    for (name, v) in [("contrastive", l.mtc), ("matching", l.mtm), ("captioning", l.caption)] {
        println!("{name:>12}: {:.4}", tape.scalar(v.expect("all weights are non-zero")));
    }
    println!("{:>12}: {:.4}", "total", tape.scalar(l.total));
    let grads = tape.backward(l.total);
    println!("parameters with gradients: {}", grads.params().count());
    Ok(())
}
