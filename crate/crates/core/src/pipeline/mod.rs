//! Staged training: optimizer and schedule, freeze policies, dataset mixing
//! and checkpoints.

mod checkpoint;
mod data;
mod infer;
mod optim;
mod sampler;
mod schedule;
mod stages;

use std::path::PathBuf;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder3d::{Encoder3d, EncoderConfig, EncoderError};
use crate::molrepr::MolError;
use crate::moit::MoitError;
use crate::objectives::{ObjectiveError, Stage1Weights, DEFAULT_TEMPERATURE};
use crate::params::{ParamError, ParamStore};
use crate::projector::{Projector, ProjectorConfig, ProjectorError};
use crate::textlm::{LMConfig, LanguageModel, LmError, LoraConfig, LoraError, LossScope, PromptMode};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, SavedConfig, FORMAT_VERSION};
pub use data::{instruction_examples, pair_examples, ConformerPolicy, InstructionExample, PairExample};
pub use infer::{caption_with_projector, generate_response, matching_score, similarity_matrix};
pub use optim::AdamW;
pub use sampler::{fourth_root_probs, MixtureSampler};
pub use schedule::lr_at;
pub use stages::{instruction_loss, pretrain_encoder, pretrain_lm, run_stage1, run_stage2, run_stage3, Dataset, LossLog, StageOutcome, ValidationPoint};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("invalid stage config: {0}")]
    InvalidConfig(String),
    #[error("empty input")]
    EmptyInput,
    #[error("frozen parameters under `{0}` changed")]
    FrozenViolation(String),
    #[error("no checkpoint at {0}")]
    MissingCheckpoint(PathBuf),
    #[error("config digest mismatch: manifest {expected}, config.json {found}")]
    DigestMismatch { expected: String, found: String },
    #[error("checkpoint format version {0} is not supported")]
    VersionUnsupported(u32),
    #[error("stage 3 needs at least one dataset")]
    NoDatasets,
    #[error("specialist mode takes exactly one dataset, got {0}")]
    SpecialistNeedsOne(usize),
    #[error("data error: {0}")]
    Data(String),
    #[error("i/o error at {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Lora(#[from] LoraError),
    #[error(transparent)]
    Projector(#[from] ProjectorError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Molecule(#[from] MolError),
    #[error(transparent)]
    Moit(#[from] MoitError),
}

impl PipelineError {
    pub(crate) fn io(path: impl Into<PathBuf>, e: impl std::fmt::Display) -> Self {
        PipelineError::Io { path: path.into(), message: e.to_string() }
    }
}

/// How stage 3 draws its examples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mixing {
    /// Each example comes from a dataset drawn with fourth-root probabilities.
    #[default]
    Generalist,
    /// Exactly one dataset.
    Specialist,
}

impl std::str::FromStr for Mixing {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "generalist" => Ok(Mixing::Generalist),
            "specialist" => Ok(Mixing::Specialist),
            other => Err(format!("unknown mixing mode `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub stage: u8,
    pub peak_lr: f64,
    pub min_lr: f64,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    /// Optimizer steps; takes precedence over `epochs`.
    pub max_steps: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: usize,
    /// Micro-batches averaged into one update.
    pub grad_accum: usize,
    pub seed: u64,
    pub prompt_mode: PromptMode,
    pub loss_scope: LossScope,
    pub temperature: f64,
    pub weights: Stage1Weights,
    pub lora: LoraConfig,
    /// Validation period in steps for stage 3; 0 disables it.
    pub validate_every: usize,
    pub mixing: Mixing,
}

impl StageConfig {
    fn base(stage: u8) -> Self {
        Self {
            stage,
            peak_lr: 1e-4,
            min_lr: 5e-6,
            warmup_steps: 1000,
            weight_decay: 0.05,
            max_steps: None,
            epochs: Some(1),
            batch_size: 64,
            grad_accum: 1,
            seed: 0,
            prompt_mode: PromptMode::Both,
            loss_scope: LossScope::ResponseOnly,
            temperature: DEFAULT_TEMPERATURE,
            weights: Stage1Weights::default(),
            lora: LoraConfig::default(),
            validate_every: 0,
            mixing: Mixing::Generalist,
        }
    }

    pub fn stage1() -> Self {
        Self::base(1)
    }

    pub fn stage2() -> Self {
        Self::base(2)
    }

    pub fn stage3() -> Self {
        Self::base(3)
    }

    pub fn for_stage(stage: u8) -> Result<Self, PipelineError> {
        match stage {
            1..=3 => Ok(Self::base(stage)),
            s => Err(PipelineError::InvalidConfig(format!("no stage {s}"))),
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::InvalidConfig(m.into()));
        if !(1..=3).contains(&self.stage) {
            return bad("stage must be 1, 2 or 3");
        }
        if !(self.peak_lr > 0.0 && self.min_lr > 0.0 && self.min_lr <= self.peak_lr) {
            return bad("learning rates must satisfy 0 < min_lr <= peak_lr");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if self.batch_size == 0 || self.grad_accum == 0 {
            return bad("batch_size and grad_accum must be positive");
        }
        if self.max_steps.is_none() && self.epochs.is_none() {
            return bad("one of max_steps or epochs is required");
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        self.lora.validate()?;
        Ok(())
    }

    /// Optimizer steps for a training set of `n` examples.
    pub fn total_steps(&self, n: usize) -> usize {
        match (self.max_steps, self.epochs) {
            (Some(s), _) => s,
            (None, Some(e)) => e * n.div_ceil(self.batch_size * self.grad_accum).max(1),
            (None, None) => 0,
        }
    }
}

/// Sizes of all three components. Cross-component widths are derived by
/// [`ModelConfig::resolved`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub projector: ProjectorConfig,
    pub lm: LMConfig,
}

impl ModelConfig {
    pub fn resolved(mut self) -> Self {
        self.projector.encoder_dim = self.encoder.dim;
        self.projector.text_vocab_size = self.lm.vocab.size();
        self.lm.mol_dim = self.projector.dim;
        self
    }
}

/// Every trainable component sharing one parameter store.
#[derive(Clone, Debug)]
pub struct Models {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: Encoder3d,
    pub projector: Projector,
    pub lm: LanguageModel,
}

impl Models {
    /// Fresh weights from `seed`; the encoder starts frozen.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, PipelineError> {
        let config = config.resolved();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Encoder3d::new(config.encoder.clone(), &mut store, &mut rng)?;
        let projector = Projector::new(config.projector.clone(), &mut store, &mut rng)?;
        let lm = LanguageModel::new(config.lm.clone(), &mut store, &mut rng)?;
        encoder.freeze(&mut store);
        Ok(Self { config, store, encoder, projector, lm })
    }
}
