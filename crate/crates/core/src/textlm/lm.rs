use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lora::LoraConfig;
use super::mixed::MixedSequence;
use super::vocab::{Vocabulary, EOS};
use super::LmError;
use crate::autograd::{AttnMask, Tape, Var};
use crate::nn::{Embedding, FeedForward, LayerNorm, Linear, MultiHeadAttention};
use crate::params::{ParamId, ParamStore};
use crate::projector::{argmax, QueryOutput};
use crate::tensor::Tensor;

pub const PARAM_PREFIX: &str = "lm.";
/// Parameters trained on top of the frozen LM: the molecule-to-LM map and
/// any LoRA matrices.
pub const ADAPTER_PREFIX: &str = "adapters.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LMConfig {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub max_seq_len: usize,
    #[serde(skip)]
    pub vocab: Vocabulary,
    /// Width of the incoming query tokens.
    pub mol_dim: usize,
}

impl Default for LMConfig {
    fn default() -> Self {
        Self { layers: 2, dim: 32, heads: 4, max_seq_len: 320, vocab: Vocabulary::default(), mol_dim: 32 }
    }
}

impl LMConfig {
    pub fn validate(&self) -> Result<(), LmError> {
        if [self.layers, self.dim, self.heads, self.max_seq_len, self.mol_dim].contains(&0) {
            return Err(LmError::InvalidConfig("all sizes must be positive".into()));
        }
        if self.dim % self.heads != 0 {
            return Err(LmError::InvalidConfig("dim must be divisible by heads".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub(super) struct LmLayer {
    ln_attn: LayerNorm,
    pub(super) attn: MultiHeadAttention,
    ln_ffn: LayerNorm,
    pub(super) ffn: FeedForward,
}

impl LmLayer {
    pub(super) fn linear_mut(&mut self, module: &str) -> Option<&mut Linear> {
        Some(match module {
            "q_proj" => &mut self.attn.q,
            "k_proj" => &mut self.attn.k,
            "v_proj" => &mut self.attn.v,
            "o_proj" => &mut self.attn.o,
            "ffn_up" => &mut self.ffn.up,
            "ffn_down" => &mut self.ffn.down,
            _ => return None,
        })
    }
}

/// Pre-norm decoder-only transformer with learned absolute positions.
#[derive(Clone, Debug)]
pub struct LanguageModel {
    cfg: LMConfig,
    token_embed: Embedding,
    position_embed: Embedding,
    pub(super) layers: Vec<LmLayer>,
    final_ln: LayerNorm,
    head: Linear,
    mol_adapter: Linear,
    pub(super) lora: Option<LoraConfig>,
}

impl LanguageModel {
    pub fn new<R: Rng + ?Sized>(cfg: LMConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self, LmError> {
        cfg.validate()?;
        let d = cfg.dim;
        let v = cfg.vocab.size();
        let token_embed = Embedding::new(store, "lm.token_embed", v, d, rng);
        let position_embed = Embedding::new(store, "lm.position_embed", cfg.max_seq_len, d, rng);
        let layers = (0..cfg.layers)
            .map(|l| LmLayer {
                ln_attn: LayerNorm::new(store, &format!("lm.layers.{l}.ln_attn"), d),
                attn: MultiHeadAttention::new(store, &format!("lm.layers.{l}.attn"), d, d, cfg.heads, rng),
                ln_ffn: LayerNorm::new(store, &format!("lm.layers.{l}.ln_ffn"), d),
                ffn: FeedForward::new(store, &format!("lm.layers.{l}"), d, 4 * d, rng),
            })
            .collect();
        let final_ln = LayerNorm::new(store, "lm.final_ln", d);
        let head = Linear::new(store, "lm.head", d, v, true, rng);
        let mol_adapter = Linear::new(store, "adapters.mol_adapter", cfg.mol_dim, d, true, rng);
        Ok(Self { cfg, token_embed, position_embed, layers, final_ln, head, mol_adapter, lora: None })
    }

    pub fn config(&self) -> &LMConfig {
        &self.cfg
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.cfg.vocab
    }

    pub fn lora_config(&self) -> Option<&LoraConfig> {
        self.lora.as_ref()
    }

    pub fn mol_adapter(&self) -> &Linear {
        &self.mol_adapter
    }

    /// Input rows `Z`: adapted molecular tokens followed by token embeddings.
    pub fn embed(&self, tape: &mut Tape, store: &ParamStore, seq: &MixedSequence, mol: Option<Var>) -> Result<Var, LmError> {
        let text: Vec<usize> = seq.token_ids[seq.mol_rows..]
            .iter()
            .map(|t| t.ok_or_else(|| LmError::ModeInputMismatch("molecular rows must precede text".into())))
            .collect::<Result<_, _>>()?;
        let mol_rows = match (seq.mol_rows, mol) {
            (0, None) => None,
            (k, Some(m)) => {
                let found = tape.shape(m);
                if found != (k, self.cfg.mol_dim) {
                    return Err(LmError::MolTokenShape { expected: (k, self.cfg.mol_dim), found });
                }
                Some(self.mol_adapter.forward(tape, store, m))
            }
            (k, None) => return Err(LmError::MolTokenShape { expected: (k, self.cfg.mol_dim), found: (0, 0) }),
        };
        let tok = (!text.is_empty()).then(|| self.token_embed.forward(tape, store, &text));
        let parts: Vec<Var> = mol_rows.into_iter().chain(tok).collect();
        Ok(match parts.len() {
            1 => parts[0],
            _ => tape.concat_rows(&parts),
        })
    }

    /// Logits (`l×|vocab|`) for input rows `z`; row `i` sees rows `0..=i`.
    pub fn forward_embeddings(&self, tape: &mut Tape, store: &ParamStore, z: Var) -> Result<Var, LmError> {
        let l = tape.shape(z).0;
        if l > self.cfg.max_seq_len {
            return Err(LmError::SequenceTooLong { len: l, max: self.cfg.max_seq_len });
        }
        let positions: Vec<usize> = (0..l).collect();
        let pos = self.position_embed.forward(tape, store, &positions);
        let mut h = tape.add(z, pos);
        let mask = AttnMask::causal(l);
        for layer in &self.layers {
            let x = layer.ln_attn.forward(tape, store, h);
            let a = layer.attn.forward(tape, store, x, x, Some(&mask), None);
            h = tape.add(h, a);
            let x = layer.ln_ffn.forward(tape, store, h);
            let f = layer.ffn.forward(tape, store, x);
            h = tape.add(h, f);
        }
        let h = self.final_ln.forward(tape, store, h);
        Ok(self.head.forward(tape, store, h))
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, seq: &MixedSequence, mol: Option<Var>) -> Result<Var, LmError> {
        let z = self.embed(tape, store, seq, mol)?;
        self.forward_embeddings(tape, store, z)
    }

    pub fn logits(&self, store: &ParamStore, seq: &MixedSequence, mol: Option<&QueryOutput>) -> Result<Tensor, LmError> {
        let mut tape = Tape::new();
        let m = mol.map(|q| tape.constant(q.0.clone()));
        let out = self.forward(&mut tape, store, seq, m)?;
        Ok(tape.value(out).clone())
    }

    /// Greedy decoding from a prompt that ends before the response.
    pub fn greedy_generate(
        &self,
        store: &ParamStore,
        prompt: &MixedSequence,
        mol: Option<&QueryOutput>,
        max_new: usize,
    ) -> Result<String, LmError> {
        if prompt.has_response() {
            return Err(LmError::PromptHasResponse);
        }
        let ids = greedy_decode(prompt, max_new, self.cfg.max_seq_len, |seq| {
            let logits = self.logits(store, seq, mol)?;
            Ok(logits.row(logits.rows() - 1).to_vec())
        })?;
        Ok(self.cfg.vocab.decode_response(&ids)?)
    }

    pub fn params(&self, store: &ParamStore) -> Vec<ParamId> {
        store.ids_with_prefix(PARAM_PREFIX).collect()
    }

    pub fn freeze_base(&self, store: &mut ParamStore) {
        store.set_trainable_prefix(PARAM_PREFIX, false);
    }
}

/// Repeatedly appends the argmax of `next_logits` (lowest index on ties)
/// until [EOS], `max_new` tokens, or the sequence reaches `capacity`.
/// Returns the generated ids without the [EOS].
pub fn greedy_decode<F>(prompt: &MixedSequence, max_new: usize, capacity: usize, mut next_logits: F) -> Result<Vec<usize>, LmError>
where
    F: FnMut(&MixedSequence) -> Result<Vec<f64>, LmError>,
{
    if prompt.len() > capacity {
        return Err(LmError::SequenceTooLong { len: prompt.len(), max: capacity });
    }
    let mut seq = prompt.clone();
    let mut out = Vec::new();
    while out.len() < max_new && seq.len() < capacity {
        let next = argmax(&next_logits(&seq)?);
        if next == EOS {
            break;
        }
        out.push(next);
        seq.push(next);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::textlm::mixed::{compose_mixed_sequence, PromptMode};

    fn tiny() -> (LanguageModel, ParamStore) {
        let cfg = LMConfig { layers: 2, dim: 16, heads: 2, max_seq_len: 48, mol_dim: 6, ..Default::default() };
        let mut store = ParamStore::new();
        let lm = LanguageModel::new(cfg, &mut store, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        (lm, store)
    }

    #[test]
    fn logits_shape_and_softmax() {
        let (lm, store) = tiny();
        let mol = QueryOutput(Tensor::randn(3, 6, 1.0, &mut ChaCha8Rng::seed_from_u64(1)));
        let seq = compose_mixed_sequence(lm.vocab(), Some(3), Some("CC"), "go", Some("ok"), PromptMode::Both, 48).unwrap();
        let logits = lm.logits(&store, &seq, Some(&mol)).unwrap();
        assert_eq!(logits.shape(), (seq.len(), 99));
        for r in 0..logits.rows() {
            let row = logits.row(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            let total: f64 = row.iter().map(|v| (v - m).exp() / z).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mol_shape_checked() {
        let (lm, store) = tiny();
        let seq = compose_mixed_sequence(lm.vocab(), Some(3), None, "go", None, PromptMode::MolOnly, 48).unwrap();
        let bad = QueryOutput(Tensor::zeros(2, 6));
        assert!(matches!(lm.logits(&store, &seq, Some(&bad)), Err(LmError::MolTokenShape { .. })));
        assert!(matches!(lm.logits(&store, &seq, None), Err(LmError::MolTokenShape { .. })));
    }

    #[test]
    fn causal_rows() {
        let (lm, store) = tiny();
        let mut tape = Tape::new();
        let base = Tensor::randn(10, 16, 1.0, &mut ChaCha8Rng::seed_from_u64(2));
        let z = tape.constant(base.clone());
        let a = lm.forward_embeddings(&mut tape, &store, z).unwrap();
        let a = tape.value(a).clone();
        for j in 0..10 {
            let mut changed = base.clone();
            for c in 0..16 {
                changed.set(j, c, changed.get(j, c) + 3.0);
            }
            let mut tape = Tape::new();
            let z = tape.constant(changed);
            let b = lm.forward_embeddings(&mut tape, &store, z).unwrap();
            let b = tape.value(b);
            for r in 0..j {
                for c in 0..99 {
                    assert!((a.get(r, c) - b.get(r, c)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn too_long() {
        let (lm, store) = tiny();
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::zeros(49, 16));
        assert_eq!(lm.forward_embeddings(&mut tape, &store, z), Err(LmError::SequenceTooLong { len: 49, max: 48 }));
    }

    #[test]
    fn rigged_decoding() {
        let (lm, _) = tiny();
        let v = lm.vocab();
        let prompt = compose_mixed_sequence(v, None, Some("C"), "q", None, PromptMode::SmilesOnly, 48).unwrap();
        let plan = [v.char_id('4').unwrap(), v.char_id('2').unwrap(), EOS, v.char_id('9').unwrap()];
        let start = prompt.len();
        let rig = |seq: &MixedSequence| {
            let mut row = vec![0.0; 99];
            row[plan[seq.len() - start]] = 10.0;
            Ok(row)
        };
        let ids = greedy_decode(&prompt, 10, 48, rig).unwrap();
        assert_eq!(v.decode(&ids).unwrap(), "42");
        assert!(greedy_decode(&prompt, 0, 48, rig).unwrap().is_empty());
        assert_eq!(greedy_decode(&prompt, 10, prompt.len() + 1, rig).unwrap().len(), 1);
        let ties = greedy_decode(&prompt, 1, 48, |_| Ok(vec![1.0; 99])).unwrap();
        assert_eq!(ties, vec![0]);
    }

    #[test]
    fn generation_is_pure() {
        let (lm, store) = tiny();
        let prompt = compose_mixed_sequence(lm.vocab(), None, Some("CO"), "what", None, PromptMode::SmilesOnly, 48).unwrap();
        let a = lm.greedy_generate(&store, &prompt, None, 8).unwrap();
        assert_eq!(a, lm.greedy_generate(&store, &prompt, None, 8).unwrap());
        assert_eq!(lm.greedy_generate(&store, &prompt, None, 0).unwrap(), "");
        let with_resp = compose_mixed_sequence(lm.vocab(), None, Some("CO"), "w", Some("x"), PromptMode::SmilesOnly, 48).unwrap();
        assert_eq!(lm.greedy_generate(&store, &with_resp, None, 8), Err(LmError::PromptHasResponse));
    }
}
