//! Invariant 3D molecular encoder.
//!
//! Atoms are embedded by element only. Geometry enters exclusively through a
//! Gaussian basis expansion of interatomic distances, which each layer maps
//! to one additive attention-logit bias per head. Since nothing else sees the
//! coordinates, the output is invariant to rigid motions of the molecule and
//! equivariant to atom permutations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::molrepr::{pairwise_distances, Element, MolError, Molecule};
use crate::nn::{Embedding, FeedForward, LayerNorm, Linear, MultiHeadAttention};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

pub const PARAM_PREFIX: &str = "encoder.";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EncoderError {
    #[error("element {0} is not in the encoder vocabulary")]
    UnknownElement(Element),
    #[error("molecule has no coordinates")]
    CoordsUnset,
    #[error("molecule has no atoms")]
    NoAtoms,
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
}

impl From<MolError> for EncoderError {
    fn from(e: MolError) -> Self {
        match e {
            MolError::CoordsUnset => EncoderError::CoordsUnset,
            MolError::NoAtoms => EncoderError::NoAtoms,
            other => EncoderError::InvalidConfig(other.to_string()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub gaussian_kernels: usize,
    /// Å; the last Gaussian centre.
    pub d_max: f64,
    pub element_vocab: Vec<Element>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { layers: 2, dim: 32, heads: 4, gaussian_kernels: 16, d_max: 8.0, element_vocab: Element::ALL.to_vec() }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: &str| Err(EncoderError::InvalidConfig(m.to_string()));
        if self.layers == 0 || self.dim == 0 || self.heads == 0 {
            return bad("layers, dim and heads must be positive");
        }
        if self.dim % self.heads != 0 {
            return bad("dim must be divisible by heads");
        }
        if self.gaussian_kernels == 0 {
            return bad("gaussian_kernels must be at least 1");
        }
        if !(self.d_max > 0.0 && self.d_max.is_finite()) {
            return bad("d_max must be positive");
        }
        if self.element_vocab.is_empty() {
            return bad("element vocabulary is empty");
        }
        Ok(())
    }

    /// Gaussian centres evenly spaced on `[0, d_max]` and their common width
    /// (the centre spacing; `d_max` when there is a single kernel).
    pub fn basis_centres(&self) -> (Vec<f64>, f64) {
        let g = self.gaussian_kernels;
        if g == 1 {
            return (vec![0.0], self.d_max);
        }
        let step = self.d_max / (g - 1) as f64;
        ((0..g).map(|k| k as f64 * step).collect(), step)
    }
}

/// `|V|×|V|×G` distance features, stored as an `|V|²×G` matrix with row
/// `i·|V| + j` holding pair `(i, j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairFeatures {
    atoms: usize,
    values: Tensor,
}

impl PairFeatures {
    pub fn num_atoms(&self) -> usize {
        self.atoms
    }

    pub fn kernels(&self) -> usize {
        self.values.cols()
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values.get(i * self.atoms + j, k)
    }

    pub fn as_matrix(&self) -> &Tensor {
        &self.values
    }
}

/// `exp(−(d − μ_k)² / 2σ²)` for every pair and kernel. Entries are clamped
/// below at `f64::MIN_POSITIVE` so that far pairs stay strictly positive.
pub fn gaussian_basis(distances: &Tensor, cfg: &EncoderConfig) -> PairFeatures {
    let n = distances.rows();
    let (mu, sigma) = cfg.basis_centres();
    let denom = 2.0 * sigma * sigma;
    let mut values = Tensor::zeros(n * n, mu.len());
    for i in 0..n {
        for j in 0..n {
            let d = distances.get(i, j);
            for (k, m) in mu.iter().enumerate() {
                let v = (-(d - m) * (d - m) / denom).exp().max(f64::MIN_POSITIVE);
                values.set(i * n + j, k, v);
            }
        }
    }
    PairFeatures { atoms: n, values }
}

/// Encoder output `X`, one row per atom.
#[derive(Clone, Debug, PartialEq)]
pub struct AtomicRepresentations(pub Tensor);

impl AtomicRepresentations {
    pub fn num_atoms(&self) -> usize {
        self.0.rows()
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    ln_attn: LayerNorm,
    attn: MultiHeadAttention,
    pair_bias: Linear,
    ln_ffn: LayerNorm,
    ffn: FeedForward,
}

#[derive(Clone, Debug)]
pub struct Encoder3d {
    cfg: EncoderConfig,
    element_embed: Embedding,
    layers: Vec<EncoderLayer>,
    final_ln: LayerNorm,
}

impl Encoder3d {
    pub fn new<R: Rng + ?Sized>(cfg: EncoderConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self, EncoderError> {
        cfg.validate()?;
        let p = "encoder";
        let element_embed = Embedding::new(store, &format!("{p}.element_embed"), cfg.element_vocab.len(), cfg.dim, rng);
        let layers = (0..cfg.layers)
            .map(|l| EncoderLayer {
                ln_attn: LayerNorm::new(store, &format!("{p}.layers.{l}.ln_attn"), cfg.dim),
                attn: MultiHeadAttention::new(store, &format!("{p}.layers.{l}.attn"), cfg.dim, cfg.dim, cfg.heads, rng),
                pair_bias: Linear::new(store, &format!("{p}.layers.{l}.pair_bias"), cfg.gaussian_kernels, cfg.heads, true, rng),
                ln_ffn: LayerNorm::new(store, &format!("{p}.layers.{l}.ln_ffn"), cfg.dim),
                ffn: FeedForward::new(store, &format!("{p}.layers.{l}"), cfg.dim, 4 * cfg.dim, rng),
            })
            .collect();
        let final_ln = LayerNorm::new(store, &format!("{p}.final_ln"), cfg.dim);
        Ok(Self { cfg, element_embed, layers, final_ln })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn dim(&self) -> usize {
        self.cfg.dim
    }

    fn element_ids(&self, mol: &Molecule) -> Result<Vec<usize>, EncoderError> {
        mol.atoms
            .iter()
            .map(|a| {
                self.cfg.element_vocab.iter().position(|&e| e == a.element).ok_or(EncoderError::UnknownElement(a.element))
            })
            .collect()
    }

    /// Records the encoder forward pass on `tape` and returns `X` (`|V|×dim`).
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, mol: &Molecule) -> Result<Var, EncoderError> {
        if mol.num_atoms() == 0 {
            return Err(EncoderError::NoAtoms);
        }
        let ids = self.element_ids(mol)?;
        let distances = pairwise_distances(mol)?;
        let n = mol.num_atoms();
        let features = gaussian_basis(&distances, &self.cfg);
        let pf = tape.constant(features.values);

        let mut h = self.element_embed.forward(tape, store, &ids);
        for layer in &self.layers {
            let bias_all = layer.pair_bias.forward(tape, store, pf);
            let head_bias: Vec<Var> = (0..self.cfg.heads)
                .map(|k| {
                    let col = tape.slice_cols(bias_all, k, 1);
                    tape.reshape(col, n, n)
                })
                .collect();
            let x = layer.ln_attn.forward(tape, store, h);
            let a = layer.attn.forward(tape, store, x, x, None, Some(&head_bias));
            h = tape.add(h, a);
            let x = layer.ln_ffn.forward(tape, store, h);
            let f = layer.ffn.forward(tape, store, x);
            h = tape.add(h, f);
        }
        Ok(self.final_ln.forward(tape, store, h))
    }

    pub fn encode(&self, store: &ParamStore, mol: &Molecule) -> Result<AtomicRepresentations, EncoderError> {
        let mut tape = Tape::new();
        let x = self.forward(&mut tape, store, mol)?;
        Ok(AtomicRepresentations(tape.value(x).clone()))
    }

    pub fn params(&self, store: &ParamStore) -> Vec<ParamId> {
        store.ids_with_prefix(PARAM_PREFIX).collect()
    }

    pub fn freeze(&self, store: &mut ParamStore) {
        store.set_trainable_prefix(PARAM_PREFIX, false);
    }

    pub fn unfreeze(&self, store: &mut ParamStore) {
        store.set_trainable_prefix(PARAM_PREFIX, true);
    }

    pub fn is_frozen(&self, store: &ParamStore) -> bool {
        store.ids_with_prefix(PARAM_PREFIX).all(|id| !store.is_trainable(id))
    }
}
