//! Shared fixtures and a finite-difference oracle for integration tests.
#![allow(dead_code)]

use molm::autograd::{Tape, Var};
use molm::evalsuite::{extract_numeric, qa_report, QAPair};
use molm::molrepr::{Atom, Element, Molecule};
use molm::params::{ParamId, ParamStore};
use molm::pipeline::{
    generate_response, pretrain_encoder, pretrain_lm, run_stage1, run_stage3, Dataset, InstructionExample, Mixing,
    ModelConfig, Models, PairExample, StageConfig,
};
use molm::textlm::PromptMode;
use molm::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small widths for tests that train.
pub fn tiny_config() -> ModelConfig {
    let mut c = ModelConfig::default();
    c.encoder.dim = 16;
    c.encoder.heads = 2;
    c.encoder.layers = 1;
    c.encoder.gaussian_kernels = 8;
    c.projector.dim = 16;
    c.projector.heads = 2;
    c.projector.blocks = 1;
    c.projector.num_queries = 4;
    c.projector.contrast_dim = 16;
    c.projector.max_text_len = 64;
    c.lm.dim = 16;
    c.lm.heads = 2;
    c.lm.layers = 1;
    c.lm.max_seq_len = 96;
    c
}

/// A molecule with `n` atoms drawn from C, N, O at random positions at least
/// 1 Å apart.
pub fn random_molecule(id: &str, n: usize, rng: &mut ChaCha8Rng) -> Molecule {
    let pool = [Element::C, Element::N, Element::O];
    let atoms: Vec<Atom> = (0..n).map(|_| Atom::new(pool[rng.gen_range(0..3)])).collect();
    let coords = random_coords(n, rng);
    Molecule::new(id, atoms).with_coords(coords).unwrap()
}

pub fn random_coords(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let side = 2.0 * (n as f64).cbrt() + 1.0;
    let mut out: Vec<[f64; 3]> = Vec::new();
    while out.len() < n {
        let p = [rng.gen_range(0.0..side), rng.gen_range(0.0..side), rng.gen_range(0.0..side)];
        if out.iter().all(|q| (0..3).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>() >= 1.0) {
            out.push(p);
        }
    }
    out
}

/// Molecule with the given element counts; its text names the counts.
pub fn composition_molecule(id: &str, counts: [usize; 3], rng: &mut ChaCha8Rng) -> (Molecule, String) {
    let els = [Element::C, Element::N, Element::O];
    let atoms: Vec<Atom> = counts.iter().zip(els).flat_map(|(&k, e)| std::iter::repeat_n(Atom::new(e), k)).collect();
    let n = atoms.len();
    let m = Molecule::new(id, atoms).with_coords(random_coords(n, rng)).unwrap();
    let text = format!("{} carbon {} nitrogen {} oxygen", counts[0], counts[1], counts[2]);
    (m, text)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 { a } else { gcd(b, a % b) }
}

/// `n` pairs with distinct element ratios.
pub fn composition_pairs(n: usize, seed: u64) -> Vec<PairExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut combos: Vec<[usize; 3]> = Vec::new();
    for c in 1..=6 {
        for nn in 0..=4 {
            for o in 0..=4 {
                // Attention pooling sees ratios, so keep one composition per ratio.
                if gcd(gcd(c, nn), o) == 1 {
                    combos.push([c, nn, o]);
                }
            }
        }
    }
    assert!(n <= combos.len());
    combos.truncate(n);
    combos
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let id = format!("m{i:03}");
            let (molecule, text) = composition_molecule(&id, c, &mut rng);
            PairExample { id, molecule, text }
        })
        .collect()
}

pub fn caption_examples(pairs: &[PairExample]) -> Vec<InstructionExample> {
    pairs
        .iter()
        .map(|p| InstructionExample {
            id: p.id.clone(),
            molecule: p.molecule.clone(),
            smiles: "C".into(),
            prompt: "Describe the input molecule.".into(),
            response: p.text.clone(),
        })
        .collect()
}

/// Worst relative error `‖g − ĝ‖ / max(‖g‖, ‖ĝ‖, 1e-3·‖G‖)` between the tape
/// gradient `g` of each listed parameter and central differences `ĝ` of
/// `loss`, where `G` is the full tape gradient over `ids`. The floor only
/// matters for gradients that vanish identically, such as a key bias under
/// softmax, whose finite differences are pure rounding noise.
pub fn param_grad_error(
    store: &mut ParamStore,
    ids: &[ParamId],
    loss: &dyn Fn(&mut Tape, &ParamStore) -> Var,
) -> f64 {
    let mut tape = Tape::new();
    let l = loss(&mut tape, store);
    let grads = tape.backward(l);
    let eval = |store: &ParamStore| {
        let mut t = Tape::new();
        let v = loss(&mut t, store);
        t.scalar(v)
    };
    let scale = ids.iter().filter_map(|&id| grads.param(id)).map(|g| g.norm().powi(2)).sum::<f64>().sqrt();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for &id in ids {
        let analytic = grads.param(id).cloned().unwrap_or_else(|| {
            let (r, c) = store.value(id).shape();
            Tensor::zeros(r, c)
        });
        let mut numeric = Tensor::zeros(analytic.rows(), analytic.cols());
        for k in 0..analytic.len() {
            let orig = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = orig + h;
            let up = eval(store);
            store.value_mut(id).data_mut()[k] = orig - h;
            let down = eval(store);
            store.value_mut(id).data_mut()[k] = orig;
            numeric.data_mut()[k] = (up - down) / (2.0 * h);
        }
        let denom = analytic.norm().max(numeric.norm()).max(1e-3 * scale).max(1e-12);
        let diff = analytic.zip_map(&numeric, |a, b| a - b).norm() / denom;
        worst = worst.max(diff);
    }
    worst
}

/// Short-run schedule used by the training fixtures: 20 warmup steps and no
/// weight decay.
pub fn quick(stage: StageConfig, steps: usize, peak_lr: f64, batch_size: usize) -> StageConfig {
    StageConfig {
        max_steps: Some(steps),
        warmup_steps: 20,
        peak_lr,
        min_lr: peak_lr.min(1e-4),
        weight_decay: 0.0,
        batch_size,
        ..stage
    }
}

/// Eight composition captions, each molecule with its own SMILES.
pub fn caption_fixture() -> Vec<InstructionExample> {
    let smiles = ["C", "CC", "CCC", "CCO", "CN", "CCN", "OCO", "NCN"];
    let mut ex = caption_examples(&composition_pairs(8, 2));
    for (e, s) in ex.iter_mut().zip(smiles) {
        e.smiles = s.into();
    }
    ex
}

/// Eight conformers of NCCO (one zig-zag scaled from 0.5 to 2.6) whose answer
/// is the longest interatomic distance rounded to an integer. The SMILES is
/// the same for all of them, so only coordinates determine the answer.
pub fn conformer_fixture() -> Vec<InstructionExample> {
    let base = molm::molrepr::parse_smiles("NCCO").unwrap();
    let zig = [[0.0, 0.0, 0.0], [1.25, 0.85, 0.0], [2.5, 0.0, 0.0], [3.75, 0.85, 0.0]];
    (0..8)
        .map(|i| {
            let s = 0.5 + 0.3 * i as f64;
            let coords: Vec<[f64; 3]> = zig.iter().map(|p| [p[0] * s, p[1] * s, p[2] * s]).collect();
            let molecule = base.clone().with_coords(coords).unwrap();
            let d = molm::molrepr::pairwise_distances(&molecule).unwrap();
            let longest = d.data().iter().copied().fold(0.0, f64::max);
            InstructionExample {
                id: format!("c{i}"),
                molecule,
                smiles: "NCCO".into(),
                prompt: "Span?".into(),
                response: format!("{}", longest.round()),
            }
        })
        .collect()
}

/// Pretrains the base LM on the fixture texts (prompt plus response and the
/// response alone).
pub fn pretrain_lm_on(models: &mut Models, ex: &[InstructionExample], steps: usize) {
    let corpus: Vec<String> =
        ex.iter().flat_map(|e| [e.response.clone(), format!("{} {}", e.prompt, e.response)]).collect();
    pretrain_lm(models, &corpus, &quick(StageConfig::stage1(), steps, 1e-2, 8)).unwrap();
}

/// Mean absolute error of greedy answers on `ex` under `mode`.
pub fn held_in_mae(models: &Models, ex: &[InstructionExample], mode: PromptMode) -> f64 {
    let pairs: Vec<QAPair> = ex
        .iter()
        .map(|e| QAPair {
            gold: extract_numeric(&e.response).unwrap(),
            response: generate_response(models, Some(&e.molecule), Some(&e.smiles), &e.prompt, mode, 6).unwrap(),
            unit: String::new(),
        })
        .collect();
    qa_report(&pairs).unwrap().mae.unwrap_or(f64::INFINITY)
}

/// Encoder pretraining, stage 1 on (conformer, answer) pairs, then specialist
/// stage 3 under `mode`.
pub fn conformer_recipe(mode: PromptMode, seed: u64) -> (Models, Vec<InstructionExample>) {
    let ex = conformer_fixture();
    let mut models = Models::new(tiny_config(), seed).unwrap();
    pretrain_lm_on(&mut models, &ex, 300);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut mols: Vec<Molecule> = ex.iter().map(|e| e.molecule.clone()).collect();
    for i in 0..24 {
        mols.push(random_molecule(&format!("r{i}"), 4 + i % 5, &mut rng));
    }
    pretrain_encoder(&mut models, &mols, &quick(StageConfig::stage1(), 2000, 3e-3, 16)).unwrap();
    let pairs: Vec<PairExample> = ex
        .iter()
        .map(|e| PairExample { id: e.id.clone(), molecule: e.molecule.clone(), text: e.response.clone() })
        .collect();
    run_stage1(&mut models, &pairs, &quick(StageConfig::stage1(), 1000, 3e-3, 8)).unwrap();
    let cfg = StageConfig { prompt_mode: mode, mixing: Mixing::Specialist, ..quick(StageConfig::stage3(), 1000, 3e-3, 8) };
    run_stage3(&mut models, &[Dataset::new("conformers", ex.clone())], None, &cfg).unwrap();
    (models, ex)
}
