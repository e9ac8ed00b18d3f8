//! Save a checkpoint and load it back.
//!
//! ```bash
//! cargo run -p molm --example checkpoints
//! ```

use molm::pipeline::{load_checkpoint, save_checkpoint, ModelConfig, Models, StageConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let models = Models::new(ModelConfig::default(), 3)?;
    let dir = std::env::temp_dir().join(format!("molm-checkpoint-{}", std::process::id()));
    let manifest = save_checkpoint(&dir, &models, &StageConfig::stage1(), 0, Default::default())?;
    println!("saved stage {} to {} (config digest {})", manifest.stage, dir.display(), &manifest.config_digest[..12]);
    for entry in std::fs::read_dir(&dir)? {
        let entry = entry?;
        println!("  {:<14} {:>8} bytes", entry.file_name().to_string_lossy(), entry.metadata()?.len());
    }
    let (_, _, back) = load_checkpoint(&dir)?;
    println!("parameters round-tripped: {}", back.store.num_params() == models.store.num_params());
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
