use serde::{Deserialize, Serialize};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const SEP: usize = 3;

const SPECIALS: [&str; 4] = ["[PAD]", "[BOS]", "[EOS]", "[SEP]"];
const FIRST_CHAR: u8 = 32;
const LAST_CHAR: u8 = 126;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum VocabError {
    #[error("character {ch:?} at position {pos} is not in the vocabulary")]
    TokenOutOfVocab { pos: usize, ch: char },
    #[error("token id {0} is out of range")]
    IdOutOfRange(usize),
}

/// Character-level vocabulary: the four specials followed by printable ASCII.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    symbols: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        build_vocab()
    }
}

pub fn build_vocab() -> Vocabulary {
    let mut symbols: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    symbols.extend((FIRST_CHAR..=LAST_CHAR).map(|b| (b as char).to_string()));
    Vocabulary { symbols }
}

impl Vocabulary {
    pub fn size(&self) -> usize {
        self.symbols.len()
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.symbols.get(id).map(String::as_str)
    }

    pub fn is_special(id: usize) -> bool {
        id < SPECIALS.len()
    }

    pub fn char_id(&self, ch: char) -> Option<usize> {
        let b = u32::from(ch);
        (u32::from(FIRST_CHAR)..=u32::from(LAST_CHAR))
            .contains(&b)
            .then(|| SPECIALS.len() + (b - u32::from(FIRST_CHAR)) as usize)
    }

    /// Character-by-character encoding. Special markers are not recognised in
    /// text; `"[SEP]"` encodes as five characters.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>, VocabError> {
        text.chars()
            .enumerate()
            .map(|(pos, ch)| self.char_id(ch).ok_or(VocabError::TokenOutOfVocab { pos, ch }))
            .collect()
    }

    /// Specials are rendered as their bracketed names.
    pub fn decode(&self, ids: &[usize]) -> Result<String, VocabError> {
        ids.iter().map(|&id| self.symbol(id).ok_or(VocabError::IdOutOfRange(id))).collect()
    }

    /// Decodes up to the first [EOS], dropping [PAD] and [BOS].
    pub fn decode_response(&self, ids: &[usize]) -> Result<String, VocabError> {
        let end = ids.iter().position(|&i| i == EOS).unwrap_or(ids.len());
        let kept: Vec<usize> = ids[..end].iter().copied().filter(|&i| i != PAD && i != BOS).collect();
        self.decode(&kept)
    }

    /// Encoded text followed by [EOS].
    pub fn encode_with_eos(&self, text: &str) -> Result<Vec<usize>, VocabError> {
        let mut ids = self.encode(text)?;
        ids.push(EOS);
        Ok(ids)
    }
}
