//! Turn atom features into a fixed number of query tokens and score a caption.
//!
//! ```bash
//! cargo run -p molm --example query_tokens
//! ```

use molm::molrepr::{parse_smiles, synthetic_embed};
use molm::pipeline::{ModelConfig, Models};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let models = Models::new(ModelConfig::default(), 1)?;
    let vocab = models.lm.vocab();
    for smiles in ["C", "CCO", "c1ccccc1O"] {
        let mol = synthetic_embed(&parse_smiles(smiles)?, 0)?;
        let x = models.encoder.encode(&models.store, &mol)?;
        let q = models.projector.project(&models.store, &x)?;
        let tokens = vocab.encode("an alcohol")?;
        let logits = models.projector.caption_logits(&models.store, &x, &tokens)?;
        println!(
            "{smiles:>10}: {} atoms -> {}x{} query tokens, caption logits {}x{}",
            mol.num_atoms(),
            q.0.rows(),
            q.0.cols(),
            logits.rows(),
            logits.cols()
        );
    }
    Ok(())
}
