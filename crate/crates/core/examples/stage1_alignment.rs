//! Stage-1 training on synthetic composition pairs, then retrieval.
//!
//! ```bash
//! cargo run -p molm --release --example stage1_alignment
//! ```

use molm::evalsuite::retrieval_report;
use molm::molrepr::{Atom, Element, Molecule};
use molm::pipeline::{run_stage1, similarity_matrix, ModelConfig, Models, PairExample, StageConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut pairs = Vec::new();
    for (i, (c, o)) in [(1, 0), (2, 1), (3, 1), (1, 2), (4, 1), (3, 2), (5, 2), (1, 4)].into_iter().enumerate() {
        let atoms: Vec<Atom> = std::iter::repeat_n(Atom::new(Element::C), c).chain(std::iter::repeat_n(Atom::new(Element::O), o)).collect();
        let coords = (0..atoms.len()).map(|k| [1.5 * k as f64, rng.gen_range(-0.3..0.3), 0.0]).collect();
        let id = format!("m{i}");
        let molecule = Molecule::new(&id, atoms).with_coords(coords)?;
        pairs.push(PairExample { id, molecule, text: format!("{c} carbon {o} oxygen") });
    }

    let mut cfg = ModelConfig::default();
    cfg.projector.blocks = 1;
    cfg.projector.num_queries = 4;
    let mut models = Models::new(cfg, 0)?;
    let stage = StageConfig { max_steps: Some(150), warmup_steps: 20, peak_lr: 3e-3, weight_decay: 0.0, batch_size: 8, ..StageConfig::stage1() };
    let out = run_stage1(&mut models, &pairs, &stage)?;
    println!("loss {:.3} -> {:.3}", out.initial_loss().unwrap_or(f64::NAN), out.final_loss().unwrap_or(f64::NAN));

    let r = retrieval_report(&similarity_matrix(&models, &pairs)?, 2, 8, 0)?;
    println!("M2T acc {:.2} R@2 {:.2}", r.m2t.full.acc, r.m2t.full.recall_at_k);
    println!("T2M acc {:.2} R@2 {:.2}", r.t2m.full.acc, r.t2m.full.recall_at_k);
    Ok(())
}
