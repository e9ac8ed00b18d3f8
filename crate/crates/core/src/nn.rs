//! Layers shared by the encoder, projector and language model.

use rand::Rng;

use crate::autograd::{AttnMask, Tape, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Low-rank delta `scaling · dropout(x) · A · B` attached to a [`Linear`].
///
/// `A` is `in×r` (random), `B` is `r×out` (zero at attach time).
#[derive(Clone, Debug)]
pub struct LoraDelta {
    pub a: ParamId,
    pub b: ParamId,
    pub scaling: f64,
    pub dropout: f64,
}

/// `y = x·W + b` with `W` stored `in×out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub lora: Option<LoraDelta>,
    in_dim: usize,
    out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), Tensor::uniform(in_dim, out_dim, bound, rng), true);
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(1, out_dim), false));
        Self { weight, bias, lora: None, in_dim, out_dim }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let w = tape.param(store, self.weight);
        let mut y = tape.matmul(x, w);
        if let Some(b) = self.bias {
            let b = tape.param(store, b);
            y = tape.add_row(y, b);
        }
        if let Some(lora) = &self.lora {
            let a = tape.param(store, lora.a);
            let b = tape.param(store, lora.b);
            let xd = tape.dropout(x, lora.dropout);
            let xa = tape.matmul(xd, a);
            let delta = tape.matmul(xa, b);
            let delta = tape.scale(delta, lora.scaling);
            y = tape.add(y, delta);
        }
        y
    }

    /// Base parameters (weight and bias), excluding any adapter.
    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gain = store.add(format!("{name}.gain"), Tensor::full(1, dim, 1.0), false);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(1, dim), false);
        Self { gain, bias }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        tape.layer_norm(x, g, b)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.gain, self.bias]
    }
}

#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    rows: usize,
}

impl Embedding {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, rows: usize, dim: usize, rng: &mut R) -> Self {
        let table = store.add(format!("{name}.table"), Tensor::randn(rows, dim, 0.5, rng), true);
        Self { table, rows }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, ids: &[usize]) -> Var {
        let t = tape.param(store, self.table);
        tape.gather(t, ids)
    }
}

/// Multi-head scaled dot-product attention with optional mask and optional
/// per-head additive logit bias.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    heads: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        kv_dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        assert!(heads > 0 && dim % heads == 0, "dim must be divisible by heads");
        Self {
            q: Linear::new(store, &format!("{name}.q_proj"), dim, dim, true, rng),
            k: Linear::new(store, &format!("{name}.k_proj"), kv_dim, dim, true, rng),
            v: Linear::new(store, &format!("{name}.v_proj"), kv_dim, dim, true, rng),
            o: Linear::new(store, &format!("{name}.o_proj"), dim, dim, true, rng),
            heads,
        }
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        xq: Var,
        xkv: Var,
        mask: Option<&AttnMask>,
        head_bias: Option<&[Var]>,
    ) -> Var {
        let q = self.q.forward(tape, store, xq);
        let k = self.k.forward(tape, store, xkv);
        let v = self.v.forward(tape, store, xkv);
        let dim = tape.shape(q).1;
        let hd = dim / self.heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * hd, hd);
            let kh = tape.slice_cols(k, h * hd, hd);
            let vh = tape.slice_cols(v, h * hd, hd);
            let scores = tape.matmul_t(qh, false, kh, true);
            let mut scores = tape.scale(scores, scale);
            if let Some(bias) = head_bias {
                scores = tape.add(scores, bias[h]);
            }
            let p = tape.softmax(scores, mask);
            outs.push(tape.matmul(p, vh));
        }
        let cat = tape.concat_cols(&outs);
        self.o.forward(tape, store, cat)
    }

    pub fn params(&self) -> Vec<ParamId> {
        [&self.q, &self.k, &self.v, &self.o].iter().flat_map(|l| l.params()).collect()
    }
}

/// Position-wise `down(gelu(up(x)))`.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            up: Linear::new(store, &format!("{name}.ffn_up"), dim, hidden, true, rng),
            down: Linear::new(store, &format!("{name}.ffn_down"), hidden, dim, true, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let h = self.up.forward(tape, store, x);
        let h = tape.gelu(h);
        self.down.forward(tape, store, h)
    }
}
