//! Character-level causal language model over mixed molecular/text
//! sequences, with greedy decoding and low-rank adapters.

mod lm;
pub mod lora;
mod mixed;
pub mod vocab;

pub use lm::{greedy_decode, LMConfig, LanguageModel, ADAPTER_PREFIX, PARAM_PREFIX};
pub use lora::{lora_parameter_count, trainable_fraction, LoraConfig, LoraError, LORA_TARGETS};
pub use mixed::{compose_mixed_sequence, LossScope, MixedSequence, PromptMode};
pub use vocab::{build_vocab, VocabError, Vocabulary};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LmError {
    #[error("prompt mode mismatch: {0}")]
    ModeInputMismatch(String),
    #[error("sequence of length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error("molecular tokens have shape {found:?}, expected {expected:?}")]
    MolTokenShape { expected: (usize, usize), found: (usize, usize) },
    #[error("generation prompt already contains a response")]
    PromptHasResponse,
    #[error("invalid language model config: {0}")]
    InvalidConfig(String),
}
