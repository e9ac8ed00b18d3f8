//! Stage 2 on captions, stage 3 on property questions, then generation.
//!
//! ```bash
//! cargo run -p molm --release --example instruction_tuning
//! ```

use molm::moit::{build_instructions, read_jsonl, InstructionRecord, MoleculeRecord, OfflineEnricher, Task};
use molm::pipeline::{
    generate_response, instruction_examples, pretrain_lm, run_stage2, run_stage3, ConformerPolicy, Dataset, ModelConfig,
    Models, StageConfig,
};
use molm::textlm::PromptMode;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let records: Vec<MoleculeRecord> = read_jsonl(concat!(env!("CARGO_MANIFEST_DIR"), "/data/molecules.jsonl"))?;
    let instructions = build_instructions(&records, 0, &OfflineEnricher, 5)?;
    let pick = |task: Task| -> Vec<InstructionRecord> { instructions.iter().filter(|r| r.task == task).cloned().collect() };
    let captions = instruction_examples(&records, &pick(Task::Caption), ConformerPolicy::Synthetic, 0)?;
    let qa = instruction_examples(&records, &pick(Task::ComputedQa), ConformerPolicy::Synthetic, 0)?;

    let mut cfg = ModelConfig::default();
    cfg.lm.max_seq_len = 384;
    let mut models = Models::new(cfg, 0)?;
    let short = |stage: StageConfig, steps| StageConfig {
        max_steps: Some(steps),
        warmup_steps: 20,
        peak_lr: 3e-3,
        min_lr: 1e-4,
        batch_size: 8,
        ..stage
    };
    // The base LM is frozen from stage 2 on, so give it some text first.
    let corpus: Vec<String> = instructions.iter().map(|r| r.response.clone()).collect();
    pretrain_lm(&mut models, &corpus, &short(StageConfig::stage1(), 200))?;
    let s2 = run_stage2(&mut models, &captions, &short(StageConfig::stage2(), 200))?;
    println!("stage 2 loss {:.3}", s2.final_loss().unwrap_or(f64::NAN));
    let s3 = run_stage3(&mut models, &[Dataset::new("computed_qa", qa.clone())], None, &short(StageConfig::stage3(), 200))?;
    println!("stage 3 loss {:.3}", s3.final_loss().unwrap_or(f64::NAN));

    for e in qa.iter().take(3) {
        let answer = generate_response(&models, Some(&e.molecule), Some(&e.smiles), &e.prompt, PromptMode::Both, 60)?;
        println!("{} | {}\n  gold: {}\n  got:  {answer}", e.id, e.prompt, e.response);
    }
    Ok(())
}
