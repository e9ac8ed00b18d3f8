//! Stage-1 alignment losses (contrasting, matching, captioning) and the
//! stage-2/3 conditional language-modeling loss.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::encoder3d::AtomicRepresentations;
use crate::params::ParamStore;
use crate::projector::{Projector, ProjectorError};
use crate::textlm::vocab::EOS;
use crate::textlm::{LossScope, MixedSequence};

pub const DEFAULT_TEMPERATURE: f64 = 0.1;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ObjectiveError {
    #[error("batch of {0} pairs is too small; at least 2 are required")]
    DegenerateBatch(usize),
    #[error("no response position is marked for scoring")]
    EmptyResponseMask,
    #[error("batch has {molecules} molecules but {texts} texts")]
    LengthMismatch { molecules: usize, texts: usize },
    #[error("logits have {rows} rows for a sequence of length {len}")]
    LogitsShape { rows: usize, len: usize },
    #[error(transparent)]
    Projector(#[from] ProjectorError),
}

/// Molecule-text pairs; pair `i` is a positive. Texts are token ids without
/// specials.
#[derive(Clone, Debug, Default)]
pub struct PairBatch {
    pub atoms: Vec<AtomicRepresentations>,
    pub texts: Vec<Vec<usize>>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    fn check(&self) -> Result<(), ObjectiveError> {
        if self.atoms.len() != self.texts.len() {
            return Err(ObjectiveError::LengthMismatch { molecules: self.atoms.len(), texts: self.texts.len() });
        }
        if self.len() < 2 {
            return Err(ObjectiveError::DegenerateBatch(self.len()));
        }
        Ok(())
    }
}

/// `s(i, j) = max_k cos(m_k^i, t^j) / τ` as a `B×B` matrix. `queries[i]` is
/// `K×c`, `texts[j]` is `1×c`.
pub fn mtc_similarity(tape: &mut Tape, queries: &[Var], texts: &[Var], temperature: f64) -> Var {
    let normed: Vec<Var> = texts.iter().map(|&t| tape.l2_normalize_rows(t)).collect();
    let t = tape.concat_rows(&normed);
    let rows: Vec<Var> = queries
        .iter()
        .map(|&q| {
            let qn = tape.l2_normalize_rows(q);
            let cos = tape.matmul_t(qn, false, t, true);
            tape.max_over_rows(cos)
        })
        .collect();
    let s = tape.concat_rows(&rows);
    tape.scale(s, 1.0 / temperature)
}

/// Symmetric in-batch InfoNCE over a square similarity matrix whose
/// diagonal holds the positives.
pub fn info_nce(tape: &mut Tape, s: Var) -> Result<Var, ObjectiveError> {
    let b = tape.shape(s).0;
    if b < 2 {
        return Err(ObjectiveError::DegenerateBatch(b));
    }
    let targets: Vec<Option<usize>> = (0..b).map(Some).collect();
    let m2t = tape.cross_entropy(s, &targets);
    let st = tape.transpose(s);
    let t2m = tape.cross_entropy(st, &targets);
    let sum = tape.add(m2t, t2m);
    Ok(tape.scale(sum, 0.5))
}

pub fn mtc_loss(tape: &mut Tape, queries: &[Var], texts: &[Var], temperature: f64) -> Result<Var, ObjectiveError> {
    if queries.len() != texts.len() {
        return Err(ObjectiveError::LengthMismatch { molecules: queries.len(), texts: texts.len() });
    }
    if queries.len() < 2 {
        return Err(ObjectiveError::DegenerateBatch(queries.len()));
    }
    let s = mtc_similarity(tape, queries, texts, temperature);
    info_nce(tape, s)
}

/// Chooses the text paired with each molecule to form a negative.
pub trait NegativeSampler {
    /// `out[i] != i` for every `i`.
    fn negatives(&self, batch_size: usize, seed: u64) -> Vec<usize>;
}

/// Uniform random derangement, by rejection sampling of shuffles.
#[derive(Clone, Copy, Debug, Default)]
pub struct UniformDerangement;

impl NegativeSampler for UniformDerangement {
    fn negatives(&self, batch_size: usize, seed: u64) -> Vec<usize> {
        derangement(batch_size, seed)
    }
}

/// Seeded uniform derangement of `0..n` (`n ≥ 2`).
pub fn derangement(n: usize, seed: u64) -> Vec<usize> {
    assert!(n >= 2, "a derangement needs at least two elements");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p: Vec<usize> = (0..n).collect();
    loop {
        p.shuffle(&mut rng);
        if p.iter().enumerate().all(|(i, &j)| i != j) {
            return p;
        }
    }
}

/// Two-class cross-entropy over `B` positives (label 1) and `B` negatives
/// (label 0), using mean-pooled fused queries and the matching head.
pub fn mtm_loss(
    tape: &mut Tape,
    store: &ParamStore,
    projector: &Projector,
    xs: &[Var],
    texts: &[Vec<usize>],
    sampler: &dyn NegativeSampler,
    seed: u64,
) -> Result<Var, ObjectiveError> {
    if xs.len() != texts.len() {
        return Err(ObjectiveError::LengthMismatch { molecules: xs.len(), texts: texts.len() });
    }
    let b = xs.len();
    if b < 2 {
        return Err(ObjectiveError::DegenerateBatch(b));
    }
    let neg = sampler.negatives(b, seed);
    let mut rows = Vec::with_capacity(2 * b);
    let mut labels = Vec::with_capacity(2 * b);
    for (i, &x) in xs.iter().enumerate() {
        for (text, label) in [(&texts[i], 1), (&texts[neg[i]], 0)] {
            let fused = projector.fuse_var(tape, store, x, text)?;
            rows.push(projector.itm_logits(tape, store, fused));
            labels.push(Some(label));
        }
    }
    let logits = tape.concat_rows(&rows);
    Ok(tape.cross_entropy(logits, &labels))
}

/// Mean next-token cross-entropy of the caption `text + [EOS]`.
pub fn stage1_caption_loss(
    tape: &mut Tape,
    store: &ParamStore,
    projector: &Projector,
    x: Var,
    text: &[usize],
) -> Result<Var, ObjectiveError> {
    let tokens: Vec<usize> = text.iter().copied().chain(std::iter::once(EOS)).collect();
    let logits = projector.caption_logits_var(tape, store, x, &tokens)?;
    let targets: Vec<Option<usize>> = tokens.into_iter().map(Some).collect();
    Ok(tape.cross_entropy(logits, &targets))
}

/// Mean cross-entropy of `logits[i − 1]` against `token[i]` over the
/// positions selected by `scope`.
pub fn conditional_lm_loss(tape: &mut Tape, logits: Var, seq: &MixedSequence, scope: LossScope) -> Result<Var, ObjectiveError> {
    let rows = tape.shape(logits).0;
    if rows != seq.len() {
        return Err(ObjectiveError::LogitsShape { rows, len: seq.len() });
    }
    let mask = seq.loss_mask(scope);
    let mut targets = vec![None; rows];
    for i in 1..rows {
        if mask[i] {
            targets[i - 1] = seq.token_ids[i];
        }
    }
    if targets.iter().all(Option::is_none) {
        return Err(ObjectiveError::EmptyResponseMask);
    }
    Ok(tape.cross_entropy(logits, &targets))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage1Weights {
    pub mtc: f64,
    pub mtm: f64,
    pub caption: f64,
}

impl Default for Stage1Weights {
    fn default() -> Self {
        Self { mtc: 1.0, mtm: 1.0, caption: 1.0 }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Stage1Losses {
    pub mtc: Option<Var>,
    pub mtm: Option<Var>,
    pub caption: Option<Var>,
    pub total: Var,
}

/// Weighted sum of the three stage-1 losses, each from its own pass.
/// Components with zero weight are skipped.
#[allow(clippy::too_many_arguments)]
pub fn stage1_total(
    tape: &mut Tape,
    store: &ParamStore,
    projector: &Projector,
    batch: &PairBatch,
    weights: Stage1Weights,
    temperature: f64,
    sampler: &dyn NegativeSampler,
    seed: u64,
) -> Result<Stage1Losses, ObjectiveError> {
    batch.check()?;
    let xs: Vec<Var> = batch.atoms.iter().map(|a| tape.constant(a.0.clone())).collect();

    let mtc = if weights.mtc != 0.0 {
        let mut qf = Vec::with_capacity(xs.len());
        let mut tf = Vec::with_capacity(xs.len());
        for (&x, text) in xs.iter().zip(&batch.texts) {
            let q = projector.project_var(tape, store, x)?;
            qf.push(projector.mtc_query_features(tape, store, q));
            let cls = projector.encode_text_var(tape, store, text)?;
            tf.push(projector.mtc_text_features(tape, store, cls));
        }
        Some(mtc_loss(tape, &qf, &tf, temperature)?)
    } else {
        None
    };
    let mtm = if weights.mtm != 0.0 { Some(mtm_loss(tape, store, projector, &xs, &batch.texts, sampler, seed)?) } else { None };
    let caption = if weights.caption != 0.0 {
        let parts: Vec<Var> = xs
            .iter()
            .zip(&batch.texts)
            .map(|(&x, text)| stage1_caption_loss(tape, store, projector, x, text))
            .collect::<Result<_, _>>()?;
        let cat = tape.concat_rows(&parts);
        let m = tape.mean_rows(cat);
        Some(m)
    } else {
        None
    };

    let mut total = tape.constant(crate::tensor::Tensor::scalar(0.0));
    for (part, w) in [(mtc, weights.mtc), (mtm, weights.mtm), (caption, weights.caption)] {
        if let Some(p) = part {
            let scaled = tape.scale(p, w);
            total = tape.add(total, scaled);
        }
    }
    Ok(Stage1Losses { mtc, mtm, caption, total })
}
