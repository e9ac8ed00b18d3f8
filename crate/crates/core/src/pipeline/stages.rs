use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::sampler::MixtureSampler;
use super::{lr_at, AdamW, InstructionExample, Mixing, Models, PairExample, PipelineError, StageConfig};
use crate::autograd::{Gradients, Tape, Var};
use crate::encoder3d::{self, AtomicRepresentations};
use crate::objectives::{conditional_lm_loss, stage1_total, PairBatch, UniformDerangement};
use crate::params::ParamStore;
use crate::projector;
use crate::tensor::Tensor;
use crate::textlm::vocab::{BOS, EOS};
use crate::textlm::{self, compose_mixed_sequence, LossScope, MixedSequence, PromptMode};

/// One named instruction dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub examples: Vec<InstructionExample>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, examples: Vec<InstructionExample>) -> Self {
        Self { name: name.into(), examples }
    }
}

/// Per-step training log, one row per optimizer step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossLog {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl LossLog {
    fn new(columns: &[&str]) -> Self {
        Self { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    /// Shortest round-trip formatting, so equal runs give equal bytes.
    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValidationPoint {
    pub step: usize,
    pub loss: f64,
    /// Lowest loss seen so far, including this point.
    pub best: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplingReport {
    pub names: Vec<String>,
    pub sizes: Vec<usize>,
    pub probs: Vec<f64>,
    pub counts: Vec<usize>,
}

impl SamplingReport {
    pub fn empirical(&self) -> Vec<f64> {
        let n: usize = self.counts.iter().sum();
        self.counts.iter().map(|&c| c as f64 / n.max(1) as f64).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("dataset,size,probability,draws,empirical\n");
        for (i, e) in self.empirical().into_iter().enumerate() {
            let _ = writeln!(s, "{},{},{},{},{}", self.names[i], self.sizes[i], self.probs[i], self.counts[i], e);
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageOutcome {
    pub stage: u8,
    pub steps: usize,
    pub log: LossLog,
    pub validation: Vec<ValidationPoint>,
    /// Step whose parameters were kept, when validation ran.
    pub best_step: Option<usize>,
    pub sampling: Option<SamplingReport>,
}

impl StageOutcome {
    fn losses(&self) -> Vec<f64> {
        self.log.column("loss").unwrap_or_default()
    }

    pub fn initial_loss(&self) -> Option<f64> {
        self.losses().first().copied()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.losses().last().copied()
    }

    /// Summary numbers recorded in the checkpoint manifest.
    pub fn metrics(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        if let (Some(a), Some(b)) = (self.initial_loss(), self.final_loss()) {
            m.insert("initial_loss".into(), a);
            m.insert("final_loss".into(), b);
        }
        if let Some(v) = self.validation.last() {
            m.insert("best_validation_loss".into(), v.best);
        }
        m
    }

    /// Writes `loss.csv` and, when present, `validation.csv` and `sampling.csv`.
    pub fn write_logs(&self, dir: &Path) -> Result<(), PipelineError> {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        let write = |name: &str, body: String| {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| PipelineError::io(p, e))
        };
        write("loss.csv", self.log.to_csv())?;
        if !self.validation.is_empty() {
            let mut s = String::from("step,loss,best\n");
            for v in &self.validation {
                let _ = writeln!(s, "{},{},{}", v.step, v.loss, v.best);
            }
            write("validation.csv", s)?;
        }
        if let Some(sr) = &self.sampling {
            write("sampling.csv", sr.to_csv())?;
        }
        Ok(())
    }
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded epoch-wise shuffles; each batch is a contiguous slice of one
/// permutation, so it never repeats an example.
struct BatchStream {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchStream {
    fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Self { order, pos: 0, rng }
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        if self.pos + size > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let out = self.order[self.pos..self.pos + size].to_vec();
        self.pos += size;
        out
    }
}

/// Snapshots of the prefixes a stage must leave untouched.
struct FrozenGuard(Vec<(&'static str, BTreeMap<String, Tensor>)>);

impl FrozenGuard {
    fn take(store: &ParamStore, prefixes: &[&'static str]) -> Self {
        Self(prefixes.iter().map(|&p| (p, store.snapshot(p))).collect())
    }

    fn check(&self, store: &ParamStore) -> Result<(), PipelineError> {
        for (p, snap) in &self.0 {
            if !store.matches_snapshot(p, snap) {
                return Err(PipelineError::FrozenViolation(p.to_string()));
            }
        }
        Ok(())
    }
}

fn set_trainable_only(store: &mut ParamStore, prefixes: &[&str]) {
    store.set_all_trainable(false);
    for p in prefixes {
        store.set_trainable_prefix(p, true);
    }
}

fn encode_all<'a>(
    models: &Models,
    mols: impl IndexedParallelIterator<Item = &'a crate::molrepr::Molecule>,
) -> Result<Vec<AtomicRepresentations>, PipelineError> {
    mols.map(|m| models.encoder.encode(&models.store, m).map_err(PipelineError::from)).collect()
}

fn finish_grads(mut acc: Option<Gradients>, accum: usize) -> BTreeMap<crate::params::ParamId, Tensor> {
    match acc.as_mut() {
        Some(g) => {
            g.scale_params(1.0 / accum as f64);
            acc.map(Gradients::into_params).unwrap_or_default()
        }
        None => BTreeMap::new(),
    }
}

/// Stage 1: trains the projector (and its heads) on MTC + MTM + captioning
/// with the encoder frozen.
pub fn run_stage1(models: &mut Models, data: &[PairExample], cfg: &StageConfig) -> Result<StageOutcome, PipelineError> {
    cfg.validate()?;
    let n = data.len();
    if n < 2 {
        return Err(PipelineError::Data(format!("stage 1 needs at least two pairs, got {n}")));
    }
    if !models.encoder.is_frozen(&models.store) {
        return Err(PipelineError::InvalidConfig("encoder must be frozen before stage 1".into()));
    }
    set_trainable_only(&mut models.store, &[projector::PARAM_PREFIX]);
    let guard = FrozenGuard::take(&models.store, &[encoder3d::PARAM_PREFIX, textlm::PARAM_PREFIX, textlm::ADAPTER_PREFIX]);

    let xs = encode_all(models, data.par_iter().map(|e| &e.molecule))?;
    let max_text = models.projector.config().max_text_len - 1;
    let vocab = models.lm.vocab().clone();
    let texts: Vec<Vec<usize>> = data
        .iter()
        .map(|e| {
            let mut ids = vocab.encode(&e.text).map_err(textlm::LmError::from)?;
            ids.truncate(max_text);
            Ok(ids)
        })
        .collect::<Result<_, PipelineError>>()?;

    let bs = cfg.batch_size.min(n);
    let total = cfg.total_steps(n);
    let mut stream = BatchStream::new(n, mix(cfg.seed, 1, 0));
    let mut opt = AdamW::new(cfg.weight_decay);
    let mut log = LossLog::new(&["step", "lr", "loss", "mtc", "mtm", "caption"]);
    for step in 0..total {
        let lr = lr_at(step, total, cfg)?;
        let mut acc: Option<Gradients> = None;
        let mut sums = [0.0; 4];
        for micro in 0..cfg.grad_accum {
            let idx = stream.next(bs);
            let batch =
                PairBatch { atoms: idx.iter().map(|&i| xs[i].clone()).collect(), texts: idx.iter().map(|&i| texts[i].clone()).collect() };
            let s = mix(cfg.seed, step as u64 + 1, micro as u64);
            let mut tape = Tape::training(s);
            let l = stage1_total(&mut tape, &models.store, &models.projector, &batch, cfg.weights, cfg.temperature, &UniformDerangement, s)?;
            let val = |v: Option<Var>| v.map_or(0.0, |v| tape.scalar(v));
            for (slot, v) in sums.iter_mut().zip([tape.scalar(l.total), val(l.mtc), val(l.mtm), val(l.caption)]) {
                *slot += v;
            }
            let g = tape.backward(l.total);
            match acc.as_mut() {
                Some(a) => a.accumulate_params(&g),
                None => acc = Some(g),
            }
        }
        let grads = finish_grads(acc, cfg.grad_accum);
        opt.step(&mut models.store, &grads, lr);
        let k = cfg.grad_accum as f64;
        log.rows.push(vec![step as f64, lr, sums[0] / k, sums[1] / k, sums[2] / k, sums[3] / k]);
    }
    guard.check(&models.store)?;
    Ok(StageOutcome { stage: 1, steps: total, log, validation: Vec::new(), best_step: None, sampling: None })
}

struct Prepared {
    x: Option<AtomicRepresentations>,
    seq: MixedSequence,
}

fn prepare(models: &Models, examples: &[InstructionExample], mode: PromptMode) -> Result<Vec<Prepared>, PipelineError> {
    let xs: Vec<Option<AtomicRepresentations>> = if mode.uses_mol() {
        encode_all(models, examples.par_iter().map(|e| &e.molecule))?.into_iter().map(Some).collect()
    } else {
        vec![None; examples.len()]
    };
    let k = models.projector.num_queries();
    let max_len = models.lm.config().max_seq_len;
    examples
        .iter()
        .zip(xs)
        .map(|(e, x)| {
            let seq = compose_mixed_sequence(
                models.lm.vocab(),
                mode.uses_mol().then_some(k),
                mode.uses_smiles().then_some(e.smiles.as_str()),
                &e.prompt,
                Some(&e.response),
                mode,
                max_len,
            )?;
            Ok(Prepared { x, seq })
        })
        .collect()
}

fn example_loss(tape: &mut Tape, models: &Models, p: &Prepared, scope: LossScope) -> Result<Var, PipelineError> {
    let mol = match &p.x {
        Some(x) => {
            let xv = tape.constant(x.0.clone());
            Some(models.projector.project_var(tape, &models.store, xv)?)
        }
        None => None,
    };
    let logits = models.lm.forward(tape, &models.store, &p.seq, mol)?;
    Ok(conditional_lm_loss(tape, logits, &p.seq, scope)?)
}

fn mean_loss(tape: &mut Tape, models: &Models, batch: &[&Prepared], scope: LossScope) -> Result<Var, PipelineError> {
    let parts: Vec<Var> = batch.iter().map(|p| example_loss(tape, models, p, scope)).collect::<Result<_, _>>()?;
    Ok(match parts.len() {
        1 => parts[0],
        _ => {
            let cat = tape.concat_rows(&parts);
            tape.mean_rows(cat)
        }
    })
}

/// Mean per-example conditional LM loss without dropout.
fn evaluate(models: &Models, data: &[Prepared], scope: LossScope) -> Result<f64, PipelineError> {
    let mut total = 0.0;
    for p in data {
        let mut tape = Tape::new();
        let l = example_loss(&mut tape, models, p, scope)?;
        total += tape.scalar(l);
    }
    Ok(total / data.len() as f64)
}

/// Draws training examples either from one dataset or from a fourth-root
/// mixture of several.
enum Source {
    Single(BatchStream),
    Mixture { sampler: MixtureSampler, streams: Vec<BatchStream> },
}

impl Source {
    fn next(&mut self, size: usize, offsets: &[usize]) -> Vec<usize> {
        match self {
            Source::Single(s) => s.next(size),
            Source::Mixture { sampler, streams } => (0..size)
                .map(|_| {
                    let d = sampler.draw();
                    offsets[d] + streams[d].next(1)[0]
                })
                .collect(),
        }
    }
}

/// Width of the temporary distance head used by [`pretrain_encoder`].
const DISTANCE_HEAD_RANK: usize = 8;

/// Trains the encoder so that squared distances between atom rows, under a
/// fixed random projection, reproduce squared pairwise distances scaled by
/// `d_max`. Stands in for a pretrained geometric encoder; the encoder is
/// frozen again afterwards.
pub fn pretrain_encoder(
    models: &mut Models,
    molecules: &[crate::molrepr::Molecule],
    cfg: &StageConfig,
) -> Result<StageOutcome, PipelineError> {
    cfg.validate()?;
    if molecules.is_empty() {
        return Err(PipelineError::EmptyInput);
    }
    let targets: Vec<Tensor> = molecules
        .iter()
        .map(|m| {
            let d = crate::molrepr::pairwise_distances(m)?;
            let d_max = models.encoder.config().d_max;
            Ok(d.map(|v| (v / d_max).powi(2)))
        })
        .collect::<Result<_, PipelineError>>()?;
    let dim = models.encoder.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 8, 0));
    // A fixed projection, so the geometry has to show up in the atom rows
    // themselves rather than in a growing head.
    let head = Tensor::randn(dim, DISTANCE_HEAD_RANK, 1.0 / (dim as f64).sqrt(), &mut rng);
    models.encoder.unfreeze(&mut models.store);
    set_trainable_only(&mut models.store, &[encoder3d::PARAM_PREFIX]);
    let guard = FrozenGuard::take(&models.store, &[projector::PARAM_PREFIX, textlm::PARAM_PREFIX, textlm::ADAPTER_PREFIX]);

    let n = molecules.len();
    let bs = cfg.batch_size.min(n);
    let total = cfg.total_steps(n);
    let mut stream = BatchStream::new(n, mix(cfg.seed, 9, 0));
    let mut opt = AdamW::new(cfg.weight_decay);
    let mut log = LossLog::new(&["step", "lr", "loss"]);
    let result = (|| {
        for step in 0..total {
            let lr = lr_at(step, total, cfg)?;
            let idx = stream.next(bs);
            let mut tape = Tape::new();
            let w = tape.constant(head.clone());
            let mut parts = Vec::with_capacity(idx.len());
            for &i in &idx {
                let x = models.encoder.forward(&mut tape, &models.store, &molecules[i])?;
                let h = tape.matmul(x, w);
                // pred_ij = |h_i − h_j|², zero on the diagonal by construction.
                let atoms = molecules[i].num_atoms();
                let gram = tape.matmul_t(h, false, h, true);
                let hh = tape.mul(h, h);
                let ones_r = tape.constant(Tensor::full(DISTANCE_HEAD_RANK, 1, 1.0));
                let sq = tape.matmul(hh, ones_r);
                let ones_n = tape.constant(Tensor::full(1, atoms, 1.0));
                let rows = tape.matmul(sq, ones_n);
                let cols = tape.transpose(rows);
                let norms = tape.add(rows, cols);
                let cross = tape.scale(gram, 2.0);
                let pred = tape.sub(norms, cross);
                let t = tape.constant(targets[i].clone());
                let e = tape.sub(pred, t);
                let sq = tape.mul(e, e);
                let s = tape.sum(sq);
                let a = targets[i].len() as f64;
                parts.push(tape.scale(s, 1.0 / a));
            }
            let cat = tape.concat_rows(&parts);
            let l = tape.mean_rows(cat);
            log.rows.push(vec![step as f64, lr, tape.scalar(l)]);
            let grads = tape.backward(l).into_params();
            opt.step(&mut models.store, &grads, lr);
        }
        Ok::<(), PipelineError>(())
    })();
    models.encoder.freeze(&mut models.store);
    result?;
    guard.check(&models.store)?;
    Ok(StageOutcome { stage: 0, steps: total, log, validation: Vec::new(), best_step: None, sampling: None })
}

/// Mean per-example conditional LM loss over `examples` without dropout.
pub fn instruction_loss(
    models: &Models,
    examples: &[InstructionExample],
    mode: PromptMode,
    scope: LossScope,
) -> Result<f64, PipelineError> {
    if examples.is_empty() {
        return Err(PipelineError::EmptyInput);
    }
    evaluate(models, &prepare(models, examples, mode)?, scope)
}

/// Next-token training of the whole base LM on plain text, standing in for an
/// off-the-shelf pretrained LM. Must run before LoRA is attached; touches
/// nothing outside `lm.`.
pub fn pretrain_lm(models: &mut Models, texts: &[String], cfg: &StageConfig) -> Result<StageOutcome, PipelineError> {
    cfg.validate()?;
    if texts.is_empty() {
        return Err(PipelineError::EmptyInput);
    }
    if models.lm.lora_config().is_some() {
        return Err(PipelineError::InvalidConfig("the base LM cannot be pretrained after LoRA is attached".into()));
    }
    set_trainable_only(&mut models.store, &[textlm::PARAM_PREFIX]);
    let guard = FrozenGuard::take(&models.store, &[encoder3d::PARAM_PREFIX, projector::PARAM_PREFIX, textlm::ADAPTER_PREFIX]);
    let max_len = models.lm.config().max_seq_len;
    let seqs: Vec<Prepared> = texts
        .iter()
        .map(|t| {
            let mut ids = models.lm.vocab().encode(t).map_err(textlm::LmError::from)?;
            ids.truncate(max_len - 2);
            let token_ids: Vec<Option<usize>> =
                std::iter::once(BOS).chain(ids).chain(std::iter::once(EOS)).map(Some).collect();
            let response_mask = (0..token_ids.len()).map(|i| i > 0).collect();
            Ok(Prepared { x: None, seq: MixedSequence { mol_rows: 0, token_ids, response_mask } })
        })
        .collect::<Result<_, PipelineError>>()?;
    let n = seqs.len();
    let bs = cfg.batch_size.min(n);
    let total = cfg.total_steps(n);
    let mut stream = BatchStream::new(n, mix(cfg.seed, 6, 0));
    let mut opt = AdamW::new(cfg.weight_decay);
    let mut log = LossLog::new(&["step", "lr", "loss"]);
    for step in 0..total {
        let lr = lr_at(step, total, cfg)?;
        let idx = stream.next(bs);
        let batch: Vec<&Prepared> = idx.iter().map(|&i| &seqs[i]).collect();
        let mut tape = Tape::training(mix(cfg.seed, step as u64 + 1, 7));
        let l = mean_loss(&mut tape, models, &batch, LossScope::ResponseOnly)?;
        log.rows.push(vec![step as f64, lr, tape.scalar(l)]);
        let grads = tape.backward(l).into_params();
        opt.step(&mut models.store, &grads, lr);
    }
    guard.check(&models.store)?;
    models.lm.freeze_base(&mut models.store);
    Ok(StageOutcome { stage: 0, steps: total, log, validation: Vec::new(), best_step: None, sampling: None })
}

const STAGE23_TRAINABLE: [&str; 2] = [projector::PARAM_PREFIX, textlm::ADAPTER_PREFIX];

fn run_instruction_stage(
    models: &mut Models,
    datasets: &[Dataset],
    valid: Option<&[InstructionExample]>,
    cfg: &StageConfig,
    stage: u8,
) -> Result<StageOutcome, PipelineError> {
    cfg.validate()?;
    if datasets.iter().any(|d| d.examples.is_empty()) {
        return Err(PipelineError::EmptyInput);
    }
    if models.lm.lora_config().is_none() {
        models.lm.attach_lora(&mut models.store, &cfg.lora, mix(cfg.seed, 2, 0))?;
    }
    set_trainable_only(&mut models.store, &STAGE23_TRAINABLE);
    let guard = FrozenGuard::take(&models.store, &[encoder3d::PARAM_PREFIX, textlm::PARAM_PREFIX]);

    let all: Vec<InstructionExample> = datasets.iter().flat_map(|d| d.examples.iter().cloned()).collect();
    let prepared = prepare(models, &all, cfg.prompt_mode)?;
    let valid = valid.map(|v| prepare(models, v, cfg.prompt_mode)).transpose()?;
    let mut offsets = Vec::with_capacity(datasets.len());
    let mut acc_off = 0;
    for d in datasets {
        offsets.push(acc_off);
        acc_off += d.examples.len();
    }
    let sizes: Vec<usize> = datasets.iter().map(|d| d.examples.len()).collect();
    let mut source = if datasets.len() == 1 {
        Source::Single(BatchStream::new(sizes[0], mix(cfg.seed, 3, 0)))
    } else {
        Source::Mixture {
            sampler: MixtureSampler::fourth_root(&sizes, mix(cfg.seed, 4, 0))?,
            streams: sizes.iter().enumerate().map(|(i, &n)| BatchStream::new(n, mix(cfg.seed, 5, i as u64))).collect(),
        }
    };

    let n = all.len();
    let bs = cfg.batch_size.min(n);
    let total = cfg.total_steps(n);
    let mut opt = AdamW::new(cfg.weight_decay);
    let mut log = LossLog::new(&["step", "lr", "loss"]);
    let mut validation = Vec::new();
    let mut best: Option<(f64, usize, BTreeMap<String, Tensor>)> = None;
    for step in 0..total {
        let lr = lr_at(step, total, cfg)?;
        let mut acc: Option<Gradients> = None;
        let mut loss_sum = 0.0;
        for micro in 0..cfg.grad_accum {
            let idx = source.next(bs, &offsets);
            let batch: Vec<&Prepared> = idx.iter().map(|&i| &prepared[i]).collect();
            let mut tape = Tape::training(mix(cfg.seed, step as u64 + 1, micro as u64));
            let l = mean_loss(&mut tape, models, &batch, cfg.loss_scope)?;
            loss_sum += tape.scalar(l);
            let g = tape.backward(l);
            match acc.as_mut() {
                Some(a) => a.accumulate_params(&g),
                None => acc = Some(g),
            }
        }
        let grads = finish_grads(acc, cfg.grad_accum);
        opt.step(&mut models.store, &grads, lr);
        log.rows.push(vec![step as f64, lr, loss_sum / cfg.grad_accum as f64]);

        if let Some(v) = valid.as_deref() {
            let due = cfg.validate_every > 0 && (step + 1) % cfg.validate_every == 0;
            if due || step + 1 == total {
                let loss = evaluate(models, v, cfg.loss_scope)?;
                if best.as_ref().is_none_or(|b| loss < b.0) {
                    let snap = STAGE23_TRAINABLE.iter().flat_map(|p| models.store.snapshot(p)).collect();
                    best = Some((loss, step + 1, snap));
                }
                let best_loss = best.as_ref().map_or(loss, |b| b.0);
                validation.push(ValidationPoint { step: step + 1, loss, best: best_loss });
            }
        }
    }
    let best_step = best.map(|(_, step, snap)| {
        models.store.restore(&snap);
        step
    });
    guard.check(&models.store)?;
    let sampling = match source {
        Source::Mixture { sampler, .. } => Some(SamplingReport {
            names: datasets.iter().map(|d| d.name.clone()).collect(),
            sizes,
            probs: sampler.probs().to_vec(),
            counts: sampler.counts().to_vec(),
        }),
        Source::Single(_) => None,
    };
    Ok(StageOutcome { stage, steps: total, log, validation, best_step, sampling })
}

/// Stage 2: projector, molecule adapter and LoRA matrices under conditional
/// LM loss; the encoder and base LM stay frozen. Attaches LoRA if needed.
pub fn run_stage2(models: &mut Models, data: &[InstructionExample], cfg: &StageConfig) -> Result<StageOutcome, PipelineError> {
    if data.is_empty() {
        return Err(PipelineError::EmptyInput);
    }
    run_instruction_stage(models, &[Dataset::new("stage2", data.to_vec())], None, cfg, 2)
}

/// Stage 3 instruction tuning. Generalist mode mixes datasets by the
/// fourth root of their sizes; specialist mode takes exactly one. With a
/// validation set, the parameters with the lowest validation loss are kept.
pub fn run_stage3(
    models: &mut Models,
    datasets: &[Dataset],
    valid: Option<&[InstructionExample]>,
    cfg: &StageConfig,
) -> Result<StageOutcome, PipelineError> {
    if datasets.is_empty() {
        return Err(PipelineError::NoDatasets);
    }
    if cfg.mixing == Mixing::Specialist && datasets.len() != 1 {
        return Err(PipelineError::SpecialistNeedsOne(datasets.len()));
    }
    if valid.is_some_and(<[InstructionExample]>::is_empty) {
        return Err(PipelineError::EmptyInput);
    }
    run_instruction_stage(models, datasets, valid, cfg, 3)
}
