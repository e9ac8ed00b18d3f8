use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{CliError, DatasetCmd, EvalCmd, RunConfig, TrainCmd};
use crate::evalsuite::{caption_report, qa_report, rerank_top_k, retrieval_report, EvalReport, QAPair};
use crate::moit::{
    build_instructions, deterministic_split, read_jsonl, write_jsonl, BuildSummary, EnricherClient, InstructionRecord,
    MoleculeRecord, OfflineEnricher, Record, Task,
};
use crate::objectives::Stage1Weights;
use crate::pipeline::{
    generate_response, instruction_examples, load_checkpoint, matching_score, pair_examples, pretrain_encoder,
    pretrain_lm, run_stage1, run_stage2, run_stage3, save_checkpoint, similarity_matrix, ConformerPolicy, Dataset,
    InstructionExample, Mixing, ModelConfig, Models, PipelineError, StageConfig, StageOutcome,
};
use crate::textlm::{LoraConfig, LossScope, PromptMode};

fn out_dir(cfg: &RunConfig) -> PathBuf {
    PathBuf::from(cfg.raw("out"))
}

fn required(cfg: &RunConfig, key: &str, what: &str) -> Result<PathBuf, CliError> {
    cfg.path(key).ok_or_else(|| CliError::Usage(format!("`{key}` is required for {what}")))
}

fn read<T: Record>(path: &Path) -> Result<Vec<T>, CliError> {
    read_jsonl(path).map_err(|source| CliError::Input { path: path.to_path_buf(), source })
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_records<T: Record>(path: &Path, records: &[T]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    write_jsonl(path, records).map_err(|source| CliError::Input { path: path.to_path_buf(), source })
}

fn write_resolved(cfg: &RunConfig, path: &Path) -> Result<(), CliError> {
    write(path, &cfg.resolved_text())
}

fn policy(cfg: &RunConfig) -> Result<ConformerPolicy, CliError> {
    match cfg.raw("data.conformers") {
        "synthetic" => Ok(ConformerPolicy::Synthetic),
        "require" => Ok(ConformerPolicy::Require),
        other => Err(CliError::Usage(format!("`data.conformers = {other}`: expected synthetic or require"))),
    }
}

fn prompt_mode(cfg: &RunConfig) -> Result<PromptMode, CliError> {
    cfg.get("prompt_mode")
}

pub(super) fn model_config(cfg: &RunConfig) -> Result<ModelConfig, CliError> {
    let mut m = ModelConfig::default();
    m.encoder.layers = cfg.get("model.encoder_layers")?;
    m.encoder.dim = cfg.get("model.encoder_dim")?;
    m.encoder.heads = cfg.get("model.encoder_heads")?;
    m.encoder.gaussian_kernels = cfg.get("model.gaussian_kernels")?;
    m.encoder.d_max = cfg.get("model.d_max")?;
    m.projector.num_queries = cfg.get("model.num_queries")?;
    m.projector.blocks = cfg.get("model.projector_blocks")?;
    m.projector.dim = cfg.get("model.projector_dim")?;
    m.projector.heads = cfg.get("model.projector_heads")?;
    m.projector.cross_attention_every = cfg.get("model.cross_attention_every")?;
    m.projector.max_text_len = cfg.get("model.max_text_len")?;
    m.projector.contrast_dim = cfg.get("model.contrast_dim")?;
    m.lm.layers = cfg.get("model.lm_layers")?;
    m.lm.dim = cfg.get("model.lm_dim")?;
    m.lm.heads = cfg.get("model.lm_heads")?;
    m.lm.max_seq_len = cfg.get("model.max_seq_len")?;
    Ok(m.resolved())
}

pub(super) fn stage_config(cfg: &RunConfig, stage: u8) -> Result<StageConfig, CliError> {
    let max_steps: usize = cfg.get("train.max_steps")?;
    let loss_scope = match cfg.raw("train.loss_scope") {
        "response_only" => LossScope::ResponseOnly,
        "all_text" => LossScope::AllText,
        other => return Err(CliError::Usage(format!("`train.loss_scope = {other}`: expected response_only or all_text"))),
    };
    let mixing: Mixing = cfg.get("train.mixing")?;
    let c = StageConfig {
        stage,
        peak_lr: cfg.get("train.peak_lr")?,
        min_lr: cfg.get("train.min_lr")?,
        warmup_steps: cfg.get("train.warmup_steps")?,
        weight_decay: cfg.get("train.weight_decay")?,
        max_steps: (max_steps > 0).then_some(max_steps),
        epochs: Some(cfg.get("train.epochs")?),
        batch_size: cfg.get("train.batch_size")?,
        grad_accum: cfg.get("train.grad_accum")?,
        seed: cfg.get("seed")?,
        prompt_mode: prompt_mode(cfg)?,
        loss_scope,
        temperature: cfg.get("train.temperature")?,
        weights: Stage1Weights {
            mtc: cfg.get("train.mtc_weight")?,
            mtm: cfg.get("train.mtm_weight")?,
            caption: cfg.get("train.caption_weight")?,
        },
        lora: LoraConfig {
            rank: cfg.get("train.lora_rank")?,
            alpha: cfg.get("train.lora_alpha")?,
            dropout: cfg.get("train.lora_dropout")?,
            ..LoraConfig::default()
        },
        validate_every: cfg.get("train.validate_every")?,
        mixing,
    };
    c.validate()?;
    Ok(c)
}

fn pretrain_config(cfg: &RunConfig, steps: usize) -> Result<StageConfig, CliError> {
    Ok(StageConfig {
        max_steps: Some(steps),
        warmup_steps: cfg.get("pretrain.warmup_steps")?,
        peak_lr: cfg.get("pretrain.peak_lr")?,
        min_lr: cfg.get("pretrain.min_lr")?,
        weight_decay: 0.0,
        batch_size: cfg.get("pretrain.batch_size")?,
        seed: cfg.get("seed")?,
        ..StageConfig::stage1()
    })
}

fn print_summary(label: &str, records: &[InstructionRecord]) {
    let s = BuildSummary::of(records);
    println!("{label}: {} instruction records", s.total());
    for (task, n) in &s.by_task {
        println!("  task {}: {n}", task.key());
    }
    for (p, n) in &s.by_property {
        println!("  property {}: {n}", p.key());
    }
}

pub(super) fn dataset(action: DatasetCmd, cfg: &RunConfig) -> Result<(), CliError> {
    let out = out_dir(cfg);
    let seed: u64 = cfg.get("seed")?;
    let mols: Vec<MoleculeRecord> = read(&required(cfg, "data.molecules", "dataset commands")?)?;
    match action {
        DatasetCmd::Build => {
            let count: usize = cfg.get("data.descriptive_count")?;
            let records = build_instructions(&mols, seed, &OfflineEnricher, count)?;
            write_records(&out.join("instructions.jsonl"), &records)?;
            write_resolved(cfg, &out.join("dataset-build.resolved.conf"))?;
            println!("molecules: {}", mols.len());
            print_summary("instructions", &records);
        }
        DatasetCmd::Split => {
            let r: Vec<f64> = cfg.list("data.ratios")?;
            let [a, b, c] = r[..] else {
                return Err(CliError::Usage(format!("`data.ratios` needs three values, got {}", r.len())));
            };
            let split = deterministic_split(mols.iter().map(|m| m.id.as_str()), (a, b, c), seed)?;
            let parts = [("train", &split.train), ("valid", &split.valid), ("test", &split.test)];
            for (name, ids) in parts {
                let subset: Vec<MoleculeRecord> = mols.iter().filter(|m| ids.contains(&m.id)).cloned().collect();
                write_records(&out.join(format!("molecules.{name}.jsonl")), &subset)?;
                println!("{name}: {} molecules", subset.len());
            }
            if let Some(p) = cfg.path("data.instructions") {
                let ins: Vec<InstructionRecord> = read(&p)?;
                if let Some(orphan) = ins.iter().find(|r| !split.train.contains(&r.mol_id) && !split.valid.contains(&r.mol_id) && !split.test.contains(&r.mol_id)) {
                    return Err(CliError::Data(format!("instruction refers to unknown molecule {}", orphan.mol_id)));
                }
                for (name, ids) in parts {
                    let subset: Vec<InstructionRecord> = ins.iter().filter(|r| ids.contains(&r.mol_id)).cloned().collect();
                    write_records(&out.join(format!("instructions.{name}.jsonl")), &subset)?;
                    print_summary(name, &subset);
                }
            }
            write_resolved(cfg, &out.join("dataset-split.resolved.conf"))?;
        }
        DatasetCmd::Enrich => {
            let enricher = OfflineEnricher;
            let mut enriched = 0;
            let mut recs = mols.clone();
            for r in &mut recs {
                if let Some(d) = &r.description {
                    r.description = Some(enricher.enrich("", &r.smiles, d)?);
                    enriched += 1;
                }
            }
            write_records(&out.join("molecules.enriched.jsonl"), &recs)?;
            write_resolved(cfg, &out.join("dataset-enrich.resolved.conf"))?;
            println!("molecules: {}, enriched descriptions: {enriched}", recs.len());
        }
    }
    Ok(())
}

fn instructions_from(cfg: &RunConfig, mols: &[MoleculeRecord], path: &Path) -> Result<Vec<InstructionExample>, CliError> {
    let ins: Vec<InstructionRecord> = read(path)?;
    Ok(instruction_examples(mols, &ins, policy(cfg)?, cfg.get("seed")?)?)
}

fn finish_stage(
    cfg: &RunConfig,
    models: &Models,
    stage_cfg: &StageConfig,
    outcome: &StageOutcome,
    dir: &Path,
) -> Result<(), CliError> {
    save_checkpoint(dir, models, stage_cfg, outcome.steps, outcome.metrics())?;
    outcome.write_logs(dir)?;
    write_resolved(cfg, &dir.join("resolved.conf"))?;
    let (a, b) = (outcome.initial_loss().unwrap_or(f64::NAN), outcome.final_loss().unwrap_or(f64::NAN));
    println!("stage{}: {} steps, loss {a:.4} -> {b:.4}, checkpoint {}", stage_cfg.stage, outcome.steps, dir.display());
    Ok(())
}

fn upstream(cfg: &RunConfig, default_stage: u8) -> PathBuf {
    cfg.path("train.init").unwrap_or_else(|| out_dir(cfg).join(format!("stage{default_stage}")))
}

pub(super) fn train(stage: TrainCmd, cfg: &RunConfig) -> Result<(), CliError> {
    let out = out_dir(cfg);
    let seed: u64 = cfg.get("seed")?;
    let mols: Vec<MoleculeRecord> = read(&required(cfg, "data.molecules", "training")?)?;
    match stage {
        TrainCmd::Stage1 => {
            let stage_cfg = stage_config(cfg, 1)?;
            let pairs = pair_examples(&mols, policy(cfg)?, seed)?;
            let mut models = Models::new(model_config(cfg)?, seed)?;
            let dir = out.join("stage1");
            let enc_steps: usize = cfg.get("pretrain.encoder_steps")?;
            if enc_steps > 0 {
                let conformers: Vec<_> = pairs.iter().map(|p| p.molecule.clone()).collect();
                let o = pretrain_encoder(&mut models, &conformers, &pretrain_config(cfg, enc_steps)?)?;
                o.write_logs(&dir.join("pretrain_encoder"))?;
            }
            let lm_steps: usize = cfg.get("pretrain.lm_steps")?;
            if lm_steps > 0 {
                let mut corpus: Vec<String> = pairs.iter().map(|p| p.text.clone()).collect();
                if let Some(p) = cfg.path("data.instructions") {
                    let ins: Vec<InstructionRecord> = read(&p)?;
                    corpus.extend(ins.iter().flat_map(|r| [r.response.clone(), format!("{} {}", r.prompt, r.response)]));
                }
                let o = pretrain_lm(&mut models, &corpus, &pretrain_config(cfg, lm_steps)?)?;
                o.write_logs(&dir.join("pretrain_lm"))?;
            }
            let outcome = run_stage1(&mut models, &pairs, &stage_cfg)?;
            finish_stage(cfg, &models, &stage_cfg, &outcome, &dir)
        }
        TrainCmd::Stage2 => {
            let stage_cfg = stage_config(cfg, 2)?;
            let (_, _, mut models) = load_checkpoint(&upstream(cfg, 1))?;
            let data = instructions_from(cfg, &mols, &required(cfg, "data.instructions", "stage 2")?)?;
            let outcome = run_stage2(&mut models, &data, &stage_cfg)?;
            finish_stage(cfg, &models, &stage_cfg, &outcome, &out.join("stage2"))
        }
        TrainCmd::Stage3 => {
            let stage_cfg = stage_config(cfg, 3)?;
            let (_, _, mut models) = load_checkpoint(&upstream(cfg, 2))?;
            let mut files: Vec<PathBuf> = cfg.list("data.datasets")?;
            if files.is_empty() {
                files.push(required(cfg, "data.instructions", "stage 3 without `data.datasets`")?);
            }
            let datasets = files
                .iter()
                .map(|f| {
                    let name = f.file_stem().map_or_else(|| f.display().to_string(), |s| s.to_string_lossy().into_owned());
                    Ok(Dataset::new(name, instructions_from(cfg, &mols, f)?))
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            let valid = cfg.path("data.valid").map(|p| instructions_from(cfg, &mols, &p)).transpose()?;
            let outcome = run_stage3(&mut models, &datasets, valid.as_deref(), &stage_cfg)?;
            finish_stage(cfg, &models, &stage_cfg, &outcome, &out.join("stage3"))
        }
    }
}

/// `eval.checkpoint`, or the latest stage directory under the output dir.
fn eval_checkpoint(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    if let Some(p) = cfg.path("eval.checkpoint") {
        return Ok(p);
    }
    let out = out_dir(cfg);
    (1..=3)
        .rev()
        .map(|s| out.join(format!("stage{s}")))
        .find(|d| d.join("manifest.json").is_file())
        .ok_or_else(|| PipelineError::MissingCheckpoint(out.join("stage1")).into())
}

fn generate_all(
    models: &Models,
    examples: &[InstructionExample],
    mode: PromptMode,
    max_new: usize,
) -> Result<Vec<String>, CliError> {
    let out: Result<Vec<String>, PipelineError> = examples
        .par_iter()
        .map(|e| generate_response(models, Some(&e.molecule), Some(&e.smiles), &e.prompt, mode, max_new))
        .collect();
    Ok(out?)
}

pub(super) fn eval(task: EvalCmd, cfg: &RunConfig) -> Result<(), CliError> {
    let out = out_dir(cfg);
    let seed: u64 = cfg.get("seed")?;
    let ckpt = eval_checkpoint(cfg)?;
    let (_, _, models) = load_checkpoint(&ckpt)?;
    let mols: Vec<MoleculeRecord> = read(&required(cfg, "data.molecules", "evaluation")?)?;
    let mode = prompt_mode(cfg)?;
    let max_new: usize = cfg.get("eval.max_new")?;
    let report_path = out.join("report.json");
    let mut report: EvalReport = match std::fs::read_to_string(&report_path) {
        Ok(text) => serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", report_path.display())))?,
        Err(_) => EvalReport::default(),
    };
    let select = |task: Task| -> Result<Vec<(InstructionRecord, InstructionExample)>, CliError> {
        let ins: Vec<InstructionRecord> = read(&required(cfg, "data.instructions", "caption and qa evaluation")?)?;
        let ins: Vec<InstructionRecord> = ins.into_iter().filter(|r| r.task == task).collect();
        if ins.is_empty() {
            return Err(CliError::Data(format!("no {} records to evaluate", task.key())));
        }
        let ex = instruction_examples(&mols, &ins, policy(cfg)?, seed)?;
        Ok(ins.into_iter().zip(ex).collect())
    };
    match task {
        EvalCmd::Retrieval => {
            let pairs = pair_examples(&mols, policy(cfg)?, seed)?;
            let mut sim = similarity_matrix(&models, &pairs)?;
            let top: usize = cfg.get("eval.rerank_mtm")?;
            if top > 0 {
                let xs = pairs
                    .iter()
                    .map(|p| models.encoder.encode(&models.store, &p.molecule))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(PipelineError::from)?;
                let mut failure = None;
                sim = rerank_top_k(&sim, top, |i, j| match matching_score(&models, &xs[i], &pairs[j].text) {
                    Ok(s) => s,
                    Err(e) => {
                        failure.get_or_insert(e);
                        f64::NEG_INFINITY
                    }
                });
                if let Some(e) = failure {
                    return Err(e.into());
                }
            }
            let r = retrieval_report(&sim, cfg.get("eval.k")?, cfg.get("eval.batch_size")?, seed)?;
            println!("retrieval: m2t acc {:.4} r@{} {:.4}; t2m acc {:.4} r@{} {:.4}", r.m2t.in_batch.acc, r.k, r.m2t.in_batch.recall_at_k, r.t2m.in_batch.acc, r.k, r.t2m.in_batch.recall_at_k);
            report.retrieval = Some(r);
        }
        EvalCmd::Caption => {
            let sel = select(Task::Caption)?;
            let ex: Vec<InstructionExample> = sel.iter().map(|(_, e)| e.clone()).collect();
            let gens = generate_all(&models, &ex, mode, max_new)?;
            let pairs: Vec<(String, String)> = gens.into_iter().zip(&ex).map(|(g, e)| (g, e.response.clone())).collect();
            let r = caption_report(&pairs)?;
            println!("caption: bleu2 {:.4} bleu4 {:.4} rouge_l {:.4} meteor {:.4} over {}", r.bleu2, r.bleu4, r.rouge_l, r.meteor, r.count);
            report.caption = Some(r);
        }
        EvalCmd::Qa => {
            let sel = select(Task::ComputedQa)?;
            let by_id: HashMap<&str, &MoleculeRecord> = mols.iter().map(|m| (m.id.as_str(), m)).collect();
            let ex: Vec<InstructionExample> = sel.iter().map(|(_, e)| e.clone()).collect();
            let gens = generate_all(&models, &ex, mode, max_new)?;
            let mut pairs = Vec::with_capacity(sel.len());
            let mut by_property: BTreeMap<_, Vec<QAPair>> = BTreeMap::new();
            for ((rec, _), response) in sel.iter().zip(gens) {
                let p = rec.property.ok_or_else(|| CliError::Data("computed_qa record without property".into()))?;
                let gold = by_id
                    .get(rec.mol_id.as_str())
                    .and_then(|m| m.properties.get(&p))
                    .ok_or_else(|| CliError::Data(format!("molecule {} has no {p} value", rec.mol_id)))?
                    .value;
                let pair = QAPair { gold, response, unit: p.text_unit().to_string() };
                by_property.entry(p).or_default().push(pair.clone());
                pairs.push(pair);
            }
            let r = qa_report(&pairs)?;
            for (p, ps) in &by_property {
                let pr = qa_report(ps)?;
                println!("qa {}: mae {} valid {:.1}% of {}", p.key(), pr.mae.map_or("n/a".into(), |m| format!("{m:.4}")), pr.valid_rate, pr.count);
            }
            report.qa = Some(r);
        }
    }
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Data(e.to_string()))?;
    write(&report_path, &(json + "\n"))?;
    let name = match task {
        EvalCmd::Retrieval => "retrieval",
        EvalCmd::Caption => "caption",
        EvalCmd::Qa => "qa",
    };
    write_resolved(cfg, &out.join(format!("eval-{name}.resolved.conf")))?;
    Ok(())
}

pub(super) fn generate(cfg: &RunConfig, checkpoint: &Path, molecule: &Path, prompt: &str) -> Result<(), CliError> {
    let (_, _, models) = load_checkpoint(checkpoint)?;
    let recs: Vec<MoleculeRecord> = read(molecule)?;
    let rec = recs.first().ok_or_else(|| CliError::Data(format!("{} holds no molecule", molecule.display())))?;
    let mol = rec.to_molecule()?;
    let mode = prompt_mode(cfg)?;
    let text = generate_response(&models, Some(&mol), Some(&rec.smiles), prompt, mode, cfg.get("eval.max_new")?)?;
    if !text.is_empty() {
        println!("{text}");
    }
    Ok(())
}
