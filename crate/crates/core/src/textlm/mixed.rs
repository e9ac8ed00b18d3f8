use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::vocab::{Vocabulary, BOS, EOS, SEP};
use super::LmError;

/// Which prompt segments accompany the task text.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    Both,
    SmilesOnly,
    MolOnly,
}

impl PromptMode {
    pub fn uses_mol(self) -> bool {
        matches!(self, PromptMode::Both | PromptMode::MolOnly)
    }

    pub fn uses_smiles(self) -> bool {
        matches!(self, PromptMode::Both | PromptMode::SmilesOnly)
    }
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptMode::Both => "both",
            PromptMode::SmilesOnly => "smiles_only",
            PromptMode::MolOnly => "mol_only",
        })
    }
}

impl FromStr for PromptMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "both" => Ok(PromptMode::Both),
            "smiles_only" => Ok(PromptMode::SmilesOnly),
            "mol_only" => Ok(PromptMode::MolOnly),
            other => Err(format!("unknown prompt mode {other:?} (expected both, smiles_only or mol_only)")),
        }
    }
}

/// Which target positions contribute to the language-modeling loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossScope {
    /// Response tokens and the closing [EOS].
    #[default]
    ResponseOnly,
    /// Every text token that has a predecessor.
    AllText,
}

/// Layout of one LM input: `mol_rows` soft-prompt rows followed by text.
///
/// `token_ids[i]` is `None` for molecular rows. `response_mask[i]` marks the
/// positions whose token is a scored target, predicted from position `i − 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MixedSequence {
    pub mol_rows: usize,
    pub token_ids: Vec<Option<usize>>,
    pub response_mask: Vec<bool>,
}

impl MixedSequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn text_ids(&self) -> Vec<usize> {
        self.token_ids.iter().flatten().copied().collect()
    }

    pub fn has_response(&self) -> bool {
        self.response_mask.iter().any(|&m| m)
    }

    /// Target mask under `scope`.
    pub fn loss_mask(&self, scope: LossScope) -> Vec<bool> {
        match scope {
            LossScope::ResponseOnly => self.response_mask.clone(),
            LossScope::AllText => {
                (0..self.len()).map(|i| i > self.mol_rows && self.token_ids[i].is_some()).collect()
            }
        }
    }

    /// Appends one generated token (unscored).
    pub fn push(&mut self, id: usize) {
        self.token_ids.push(Some(id));
        self.response_mask.push(false);
    }
}

/// Builds `[mol][BOS][smiles][SEP][task][SEP][response][EOS]`, dropping the
/// segments `mode` excludes. Without a response the sequence ends at the
/// second [SEP].
pub fn compose_mixed_sequence(
    vocab: &Vocabulary,
    mol_tokens: Option<usize>,
    smiles: Option<&str>,
    task_text: &str,
    response: Option<&str>,
    mode: PromptMode,
    max_seq_len: usize,
) -> Result<MixedSequence, LmError> {
    match (mode.uses_mol(), mol_tokens) {
        (true, None) => return Err(LmError::ModeInputMismatch(format!("{mode} requires molecular tokens"))),
        (false, Some(_)) => return Err(LmError::ModeInputMismatch(format!("{mode} does not take molecular tokens"))),
        _ => {}
    }
    match (mode.uses_smiles(), smiles) {
        (true, None) => return Err(LmError::ModeInputMismatch(format!("{mode} requires a SMILES string"))),
        (false, Some(_)) => return Err(LmError::ModeInputMismatch(format!("{mode} does not take a SMILES string"))),
        _ => {}
    }

    let k = mol_tokens.unwrap_or(0);
    let mut ids: Vec<Option<usize>> = vec![None; k];
    ids.push(Some(BOS));
    if let Some(s) = smiles {
        ids.extend(vocab.encode(s)?.into_iter().map(Some));
        ids.push(Some(SEP));
    }
    ids.extend(vocab.encode(task_text)?.into_iter().map(Some));
    ids.push(Some(SEP));
    let prompt_len = ids.len();
    if let Some(r) = response {
        ids.extend(vocab.encode(r)?.into_iter().map(Some));
        ids.push(Some(EOS));
    }
    if ids.len() > max_seq_len {
        return Err(LmError::SequenceTooLong { len: ids.len(), max: max_seq_len });
    }
    let response_mask = (0..ids.len()).map(|i| i >= prompt_len).collect();
    Ok(MixedSequence { mol_rows: k, token_ids: ids, response_mask })
}
