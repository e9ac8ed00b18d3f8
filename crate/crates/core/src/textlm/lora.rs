use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lm::LanguageModel;
use crate::nn::LoraDelta;
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Projection names that can carry an adapter.
pub const LORA_TARGETS: [&str; 6] = ["q_proj", "k_proj", "v_proj", "o_proj", "ffn_up", "ffn_down"];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LoraError {
    #[error("unknown LoRA target module {0:?}")]
    UnknownTargetModule(String),
    #[error("no adapters attached")]
    NoAdapters,
    #[error("adapters already attached")]
    AlreadyAttached,
    #[error("invalid LoRA config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    pub dropout: f64,
    pub target_modules: Vec<String>,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self { rank: 8, alpha: 32.0, dropout: 0.1, target_modules: LORA_TARGETS.iter().map(|s| s.to_string()).collect() }
    }
}

impl LoraConfig {
    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn validate(&self) -> Result<(), LoraError> {
        if self.rank == 0 {
            return Err(LoraError::InvalidConfig("rank must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(LoraError::InvalidConfig("alpha must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(LoraError::InvalidConfig("dropout must lie in [0, 1)".into()));
        }
        if let Some(bad) = self.target_modules.iter().find(|m| !LORA_TARGETS.contains(&m.as_str())) {
            return Err(LoraError::UnknownTargetModule(bad.clone()));
        }
        Ok(())
    }
}

impl LanguageModel {
    /// Adds `scaling · x·A·B` to every targeted projection and freezes the
    /// base model. `A` (`in×r`) is uniform in `±1/√in`, `B` (`r×out`) is zero.
    /// Adapter parameters live under `adapters.lora.`.
    pub fn attach_lora(&mut self, store: &mut ParamStore, cfg: &LoraConfig, seed: u64) -> Result<(), LoraError> {
        cfg.validate()?;
        if self.lora.is_some() {
            return Err(LoraError::AlreadyAttached);
        }
        self.freeze_base(store);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut self.layers {
            for module in &cfg.target_modules {
                let linear = layer.linear_mut(module).ok_or_else(|| LoraError::UnknownTargetModule(module.clone()))?;
                let base = store.name(linear.weight).trim_start_matches("lm.").trim_end_matches(".weight").to_string();
                let (i, o) = (linear.in_dim(), linear.out_dim());
                let bound = 1.0 / (i as f64).sqrt();
                let a = store.add(format!("adapters.lora.{base}.lora_a"), Tensor::uniform(i, cfg.rank, bound, &mut rng), true);
                let b = store.add(format!("adapters.lora.{base}.lora_b"), Tensor::zeros(cfg.rank, o), true);
                linear.lora = Some(LoraDelta { a, b, scaling: cfg.scaling(), dropout: cfg.dropout });
            }
        }
        self.lora = Some(cfg.clone());
        Ok(())
    }

    /// Folds every adapter into its base weight (`W ← W + scaling·A·B`) and
    /// removes the adapter parameters.
    pub fn merge_lora(&mut self, store: &mut ParamStore) -> Result<(), LoraError> {
        let cfg = self.lora.take().ok_or(LoraError::NoAdapters)?;
        for layer in &mut self.layers {
            for module in &cfg.target_modules {
                let linear = layer.linear_mut(module).expect("validated at attach");
                let Some(delta) = linear.lora.take() else { continue };
                let mut update = store.value(delta.a).matmul(store.value(delta.b));
                update.scale_assign(delta.scaling);
                store.value_mut(linear.weight).add_assign(&update);
                store.remove(delta.a);
                store.remove(delta.b);
            }
        }
        Ok(())
    }
}

/// Adapter parameter count for weights of the given `(in, out)` shapes.
pub fn lora_parameter_count(shapes: &[(usize, usize)], rank: usize) -> usize {
    shapes.iter().map(|&(i, o)| rank * (i + o)).sum()
}

/// Trainable parameters over all registered parameters; 0 for an empty store.
pub fn trainable_fraction(store: &ParamStore) -> f64 {
    let total = store.num_params();
    if total == 0 {
        return 0.0;
    }
    store.num_trainable() as f64 / total as f64
}
