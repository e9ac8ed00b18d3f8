//! Attach low-rank adapters to the language model, count what trains, merge.
//!
//! ```bash
//! cargo run -p molm --example lora_adapters
//! ```

use molm::params::ParamStore;
use molm::tensor::Tensor;
use molm::textlm::{
    compose_mixed_sequence, lora_parameter_count, trainable_fraction, LMConfig, LanguageModel, LoraConfig, PromptMode,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let mut lm = LanguageModel::new(LMConfig::default(), &mut store, &mut rng)?;
    let seq = compose_mixed_sequence(lm.vocab(), None, Some("CCO"), "Describe the input molecule.", None, PromptMode::SmilesOnly, 320)?;
    let before = lm.logits(&store, &seq, None)?;

    let cfg = LoraConfig::default();
    lm.attach_lora(&mut store, &cfg, 0)?;
    println!("trainable fraction after attach: {:.4}", trainable_fraction(&store));
    println!("zero-init change: {:.1e}", before.max_abs_diff(&lm.logits(&store, &seq, None)?));

    // Pretend training moved the adapters.
    for id in store.ids_with_prefix("adapters.lora.").collect::<Vec<_>>() {
        let (r, c) = store.value(id).shape();
        *store.value_mut(id) = Tensor::randn(r, c, 0.05, &mut rng);
    }
    let adapted = lm.logits(&store, &seq, None)?;
    lm.merge_lora(&mut store)?;
    println!("merge change: {:.1e}", adapted.max_abs_diff(&lm.logits(&store, &seq, None)?));

    // Rank-8 adapters on the four attention and three gated-FFN projections
    // of a 7B decoder.
    let (d, h, layers) = (4096, 11008, 32);
    let per_layer = [(d, d), (d, d), (d, d), (d, d), (d, h), (d, h), (h, d)];
    let adapters = layers * lora_parameter_count(&per_layer, 8);
    println!("7B-scale adapters: {adapters} parameters ({:.4}% of 6.74e9)", 100.0 * adapters as f64 / 6.738e9);
    Ok(())
}
