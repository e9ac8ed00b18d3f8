//! Querying transformer that compresses atomic representations into a fixed
//! number of query tokens.
//!
//! Two streams share every self-attention layer: the query stream (learnable
//! query tokens, which also cross-attend to the encoder output) and the text
//! stream (a BERT-style encoder whose first position is [BOS], used as the
//! summary token). Each stream keeps its own feed-forward layers. The mask
//! over the concatenated `[queries; text]` sequence selects the objective.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{AttnMask, Tape, Var};
use crate::encoder3d::AtomicRepresentations;
use crate::nn::{Embedding, FeedForward, LayerNorm, Linear, MultiHeadAttention};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::textlm::vocab::{BOS, EOS, PAD};

pub const PARAM_PREFIX: &str = "projector.";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ProjectorError {
    #[error("token id {0} is outside the text vocabulary")]
    TokenOutOfVocab(usize),
    #[error("text is empty")]
    EmptyText,
    #[error("text of {len} positions exceeds the maximum of {max}")]
    TextTooLong { len: usize, max: usize },
    #[error("atomic representations have width {found}, expected {expected}")]
    EncoderDimMismatch { expected: usize, found: usize },
    #[error("invalid projector config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectorConfig {
    pub num_queries: usize,
    pub blocks: usize,
    pub dim: usize,
    pub heads: usize,
    /// Block `b` gets cross-attention when `b % cross_attention_every == 0`.
    pub cross_attention_every: usize,
    pub text_vocab_size: usize,
    /// Width of the encoder output the queries attend to.
    pub encoder_dim: usize,
    /// Text-stream positions including the leading [BOS].
    pub max_text_len: usize,
    /// Width of the contrastive embedding space.
    pub contrast_dim: usize,
}

impl Default for ProjectorConfig {
    fn default() -> Self {
        Self {
            num_queries: 8,
            blocks: 2,
            dim: 32,
            heads: 4,
            cross_attention_every: 1,
            text_vocab_size: 99,
            encoder_dim: 32,
            max_text_len: 256,
            contrast_dim: 32,
        }
    }
}

impl ProjectorConfig {
    pub fn validate(&self) -> Result<(), ProjectorError> {
        let positive = [
            self.num_queries,
            self.blocks,
            self.dim,
            self.heads,
            self.cross_attention_every,
            self.text_vocab_size,
            self.encoder_dim,
            self.max_text_len,
            self.contrast_dim,
        ];
        if positive.contains(&0) {
            return Err(ProjectorError::InvalidConfig("all sizes must be positive".into()));
        }
        if self.dim % self.heads != 0 {
            return Err(ProjectorError::InvalidConfig("dim must be divisible by heads".into()));
        }
        Ok(())
    }
}

/// The `K×dim` query-token outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryOutput(pub Tensor);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Each stream attends only within itself (contrasting).
    Unimodal,
    /// Every position attends to every position (matching).
    FusedBidirectional,
    /// Queries see queries; text sees all queries and text up to itself
    /// (captioning).
    MultimodalCausal,
}

impl MaskMode {
    pub fn mask(self, queries: usize, text: usize) -> AttnMask {
        let n = queries + text;
        AttnMask::from_fn(n, n, |r, c| match self {
            MaskMode::Unimodal => (r < queries) == (c < queries),
            MaskMode::FusedBidirectional => true,
            MaskMode::MultimodalCausal => c < queries || (r >= queries && c <= r),
        })
    }
}

#[derive(Clone, Debug)]
struct Block {
    ln_self: LayerNorm,
    self_attn: MultiHeadAttention,
    cross: Option<(LayerNorm, MultiHeadAttention)>,
    ln_ffn_query: LayerNorm,
    ffn_query: FeedForward,
    ln_ffn_text: LayerNorm,
    ffn_text: FeedForward,
}

/// Outputs of a joint pass, after the final layer norm.
#[derive(Clone, Copy, Debug)]
pub struct JointOutput {
    pub queries: Option<Var>,
    pub text: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct Projector {
    cfg: ProjectorConfig,
    query_tokens: ParamId,
    token_embed: Embedding,
    position_embed: Embedding,
    embed_ln: LayerNorm,
    blocks: Vec<Block>,
    final_ln: LayerNorm,
    mtc_query_proj: Linear,
    mtc_text_proj: Linear,
    itm_head: Linear,
    lm_head: Linear,
}

impl Projector {
    pub fn new<R: Rng + ?Sized>(cfg: ProjectorConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self, ProjectorError> {
        cfg.validate()?;
        let p = "projector";
        let d = cfg.dim;
        let query_tokens = store.add(format!("{p}.query_tokens"), Tensor::randn(cfg.num_queries, d, 0.5, rng), true);
        let token_embed = Embedding::new(store, &format!("{p}.token_embed"), cfg.text_vocab_size, d, rng);
        let position_embed = Embedding::new(store, &format!("{p}.position_embed"), cfg.max_text_len, d, rng);
        let embed_ln = LayerNorm::new(store, &format!("{p}.embed_ln"), d);
        let blocks = (0..cfg.blocks)
            .map(|b| {
                let name = format!("{p}.blocks.{b}");
                let cross = (b % cfg.cross_attention_every == 0).then(|| {
                    (
                        LayerNorm::new(store, &format!("{name}.ln_cross"), d),
                        MultiHeadAttention::new(store, &format!("{name}.cross_attn"), d, cfg.encoder_dim, cfg.heads, rng),
                    )
                });
                Block {
                    ln_self: LayerNorm::new(store, &format!("{name}.ln_self"), d),
                    self_attn: MultiHeadAttention::new(store, &format!("{name}.self_attn"), d, d, cfg.heads, rng),
                    cross,
                    ln_ffn_query: LayerNorm::new(store, &format!("{name}.ln_ffn_query"), d),
                    ffn_query: FeedForward::new(store, &format!("{name}.query"), d, 4 * d, rng),
                    ln_ffn_text: LayerNorm::new(store, &format!("{name}.ln_ffn_text"), d),
                    ffn_text: FeedForward::new(store, &format!("{name}.text"), d, 4 * d, rng),
                }
            })
            .collect();
        let final_ln = LayerNorm::new(store, &format!("{p}.final_ln"), d);
        let mtc_query_proj = Linear::new(store, &format!("{p}.mtc_query_proj"), d, cfg.contrast_dim, true, rng);
        let mtc_text_proj = Linear::new(store, &format!("{p}.mtc_text_proj"), d, cfg.contrast_dim, true, rng);
        let itm_head = Linear::new(store, &format!("{p}.itm_head"), d, 2, true, rng);
        let lm_head = Linear::new(store, &format!("{p}.lm_head"), d, cfg.text_vocab_size, true, rng);
        Ok(Self {
            cfg,
            query_tokens,
            token_embed,
            position_embed,
            embed_ln,
            blocks,
            final_ln,
            mtc_query_proj,
            mtc_text_proj,
            itm_head,
            lm_head,
        })
    }

    pub fn config(&self) -> &ProjectorConfig {
        &self.cfg
    }

    pub fn num_queries(&self) -> usize {
        self.cfg.num_queries
    }

    pub fn dim(&self) -> usize {
        self.cfg.dim
    }

    /// Self-attention parameters of block `b`, used by both streams.
    pub fn query_self_attention(&self, b: usize) -> Vec<ParamId> {
        self.blocks[b].self_attn.params()
    }

    /// Self-attention parameters of block `b` as seen by the text stream.
    pub fn text_self_attention(&self, b: usize) -> Vec<ParamId> {
        self.blocks[b].self_attn.params()
    }

    /// Cross-attention module of block `b`, if that block has one.
    pub fn cross_attention(&self, b: usize) -> Option<&MultiHeadAttention> {
        self.blocks[b].cross.as_ref().map(|(_, attn)| attn)
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    fn check_text(&self, ids: &[usize]) -> Result<(), ProjectorError> {
        if ids.is_empty() {
            return Err(ProjectorError::EmptyText);
        }
        if ids.len() > self.cfg.max_text_len {
            return Err(ProjectorError::TextTooLong { len: ids.len(), max: self.cfg.max_text_len });
        }
        match ids.iter().find(|&&i| i >= self.cfg.text_vocab_size) {
            Some(&bad) => Err(ProjectorError::TokenOutOfVocab(bad)),
            None => Ok(()),
        }
    }

    fn check_atoms(&self, tape: &Tape, x: Var) -> Result<(), ProjectorError> {
        let found = tape.shape(x).1;
        if found != self.cfg.encoder_dim {
            return Err(ProjectorError::EncoderDimMismatch { expected: self.cfg.encoder_dim, found });
        }
        Ok(())
    }

    /// One pass over `[queries; text]`. `text_input` is the literal
    /// text-stream input, already including any leading [BOS].
    pub fn forward_joint(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Option<Var>,
        text_input: Option<&[usize]>,
        mode: MaskMode,
    ) -> Result<JointOutput, ProjectorError> {
        if let Some(ids) = text_input {
            self.check_text(ids)?;
        }
        if let Some(x) = x {
            self.check_atoms(tape, x)?;
        }
        let k = if x.is_some() { self.cfg.num_queries } else { 0 };
        let mut q = x.map(|_| tape.param(store, self.query_tokens));
        let mut t = text_input.map(|ids| {
            let tok = self.token_embed.forward(tape, store, ids);
            let positions: Vec<usize> = (0..ids.len()).collect();
            let pos = self.position_embed.forward(tape, store, &positions);
            let e = tape.add(tok, pos);
            self.embed_ln.forward(tape, store, e)
        });
        let t_len = text_input.map_or(0, <[usize]>::len);
        let mask = (k > 0 && t_len > 0).then(|| mode.mask(k, t_len));

        for block in &self.blocks {
            let parts: Vec<Var> = q.iter().chain(t.iter()).copied().collect();
            let joint = if parts.len() == 1 { parts[0] } else { tape.concat_rows(&parts) };
            let normed = block.ln_self.forward(tape, store, joint);
            let attended = block.self_attn.forward(tape, store, normed, normed, mask.as_ref(), None);
            let joint = tape.add(joint, attended);
            if q.is_some() {
                q = Some(if t.is_some() { tape.slice_rows(joint, 0, k) } else { joint });
            }
            if t.is_some() {
                t = Some(if q.is_some() { tape.slice_rows(joint, k, t_len) } else { joint });
            }

            if let (Some(qv), Some(xv), Some((ln, cross))) = (q, x, &block.cross) {
                let normed = ln.forward(tape, store, qv);
                let c = cross.forward(tape, store, normed, xv, None, None);
                q = Some(tape.add(qv, c));
            }
            if let Some(qv) = q {
                let normed = block.ln_ffn_query.forward(tape, store, qv);
                let f = block.ffn_query.forward(tape, store, normed);
                q = Some(tape.add(qv, f));
            }
            if let Some(tv) = t {
                let normed = block.ln_ffn_text.forward(tape, store, tv);
                let f = block.ffn_text.forward(tape, store, normed);
                t = Some(tape.add(tv, f));
            }
        }
        Ok(JointOutput {
            queries: q.map(|v| self.final_ln.forward(tape, store, v)),
            text: t.map(|v| self.final_ln.forward(tape, store, v)),
        })
    }

    /// Query-token outputs for `x` (`|V|×encoder_dim`), `K×dim`.
    pub fn project_var(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, ProjectorError> {
        let out = self.forward_joint(tape, store, Some(x), None, MaskMode::Unimodal)?;
        Ok(out.queries.expect("queries present"))
    }

    pub fn project(&self, store: &ParamStore, x: &AtomicRepresentations) -> Result<QueryOutput, ProjectorError> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.0.clone());
        let q = self.project_var(&mut tape, store, xv)?;
        Ok(QueryOutput(tape.value(q).clone()))
    }

    /// `1×dim` summary of `tokens`: the output at the prepended [BOS].
    pub fn encode_text_var(&self, tape: &mut Tape, store: &ParamStore, tokens: &[usize]) -> Result<Var, ProjectorError> {
        if tokens.is_empty() {
            return Err(ProjectorError::EmptyText);
        }
        let input = with_bos(tokens);
        let out = self.forward_joint(tape, store, None, Some(&input), MaskMode::Unimodal)?;
        Ok(tape.slice_rows(out.text.expect("text present"), 0, 1))
    }

    pub fn encode_text(&self, store: &ParamStore, tokens: &[usize]) -> Result<Tensor, ProjectorError> {
        let mut tape = Tape::new();
        let v = self.encode_text_var(&mut tape, store, tokens)?;
        Ok(tape.value(v).clone())
    }

    /// Query outputs after attending jointly with the text, `K×dim`.
    pub fn fuse_var(&self, tape: &mut Tape, store: &ParamStore, x: Var, tokens: &[usize]) -> Result<Var, ProjectorError> {
        if tokens.is_empty() {
            return Err(ProjectorError::EmptyText);
        }
        let input = with_bos(tokens);
        let out = self.forward_joint(tape, store, Some(x), Some(&input), MaskMode::FusedBidirectional)?;
        Ok(out.queries.expect("queries present"))
    }

    pub fn fuse(&self, store: &ParamStore, x: &AtomicRepresentations, tokens: &[usize]) -> Result<QueryOutput, ProjectorError> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.0.clone());
        let f = self.fuse_var(&mut tape, store, xv, tokens)?;
        Ok(QueryOutput(tape.value(f).clone()))
    }

    /// Row `j` holds the logits predicting `tokens[j]` from `tokens[..j]`
    /// and the queries. The decoder input is `[BOS] + tokens[..n-1]`.
    pub fn caption_logits_var(&self, tape: &mut Tape, store: &ParamStore, x: Var, tokens: &[usize]) -> Result<Var, ProjectorError> {
        if tokens.is_empty() {
            return Err(ProjectorError::EmptyText);
        }
        if let Some(&bad) = tokens.iter().find(|&&i| i >= self.cfg.text_vocab_size) {
            return Err(ProjectorError::TokenOutOfVocab(bad));
        }
        let input = with_bos(&tokens[..tokens.len() - 1]);
        let out = self.forward_joint(tape, store, Some(x), Some(&input), MaskMode::MultimodalCausal)?;
        Ok(self.lm_head.forward(tape, store, out.text.expect("text present")))
    }

    pub fn caption_logits(&self, store: &ParamStore, x: &AtomicRepresentations, tokens: &[usize]) -> Result<Tensor, ProjectorError> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.0.clone());
        let l = self.caption_logits_var(&mut tape, store, xv, tokens)?;
        Ok(tape.value(l).clone())
    }

    /// Greedy caption decoding; stops after [EOS] (excluded) or `max_len`
    /// tokens.
    pub fn generate_caption(&self, store: &ParamStore, x: &AtomicRepresentations, max_len: usize) -> Result<Vec<usize>, ProjectorError> {
        let limit = max_len.min(self.cfg.max_text_len);
        let mut out: Vec<usize> = Vec::new();
        while out.len() < limit {
            let mut probe = out.clone();
            probe.push(PAD);
            let logits = self.caption_logits(store, x, &probe)?;
            let next = argmax(logits.row(logits.rows() - 1));
            if next == EOS {
                break;
            }
            out.push(next);
        }
        Ok(out)
    }

    /// Contrastive query features, `K×contrast_dim`.
    pub fn mtc_query_features(&self, tape: &mut Tape, store: &ParamStore, queries: Var) -> Var {
        self.mtc_query_proj.forward(tape, store, queries)
    }

    /// Contrastive text feature, `1×contrast_dim`.
    pub fn mtc_text_features(&self, tape: &mut Tape, store: &ParamStore, cls: Var) -> Var {
        self.mtc_text_proj.forward(tape, store, cls)
    }

    /// Matching logits `[unmatched, matched]` from mean-pooled fused queries.
    pub fn itm_logits(&self, tape: &mut Tape, store: &ParamStore, fused: Var) -> Var {
        let pooled = tape.mean_rows(fused);
        self.itm_head.forward(tape, store, pooled)
    }

    pub fn itm_head(&self) -> &Linear {
        &self.itm_head
    }

    pub fn params(&self, store: &ParamStore) -> Vec<ParamId> {
        store.ids_with_prefix(PARAM_PREFIX).collect()
    }
}

fn with_bos(tokens: &[usize]) -> Vec<usize> {
    std::iter::once(BOS).chain(tokens.iter().copied()).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
