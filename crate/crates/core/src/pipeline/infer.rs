use super::{Models, PairExample, PipelineError};
use crate::autograd::Tape;
use crate::encoder3d::AtomicRepresentations;
use crate::evalsuite::SimilarityMatrix;
use crate::molrepr::{MolError, Molecule};
use crate::objectives::mtc_similarity;
use crate::textlm::{compose_mixed_sequence, LmError, PromptMode};

fn text_ids(models: &Models, text: &str) -> Result<Vec<usize>, PipelineError> {
    let mut ids = models.lm.vocab().encode(text).map_err(LmError::from)?;
    ids.truncate(models.projector.config().max_text_len - 1);
    Ok(ids)
}

/// Max-over-queries cosine between every molecule and every text, with
/// row and column ids taken from the pairs.
pub fn similarity_matrix(models: &Models, pairs: &[PairExample]) -> Result<SimilarityMatrix, PipelineError> {
    if pairs.is_empty() {
        return Err(PipelineError::EmptyInput);
    }
    let (store, p) = (&models.store, &models.projector);
    let mut tape = Tape::new();
    let mut qs = Vec::with_capacity(pairs.len());
    let mut ts = Vec::with_capacity(pairs.len());
    for e in pairs {
        let x = models.encoder.encode(store, &e.molecule)?;
        let xv = tape.constant(x.0);
        let q = p.project_var(&mut tape, store, xv)?;
        qs.push(p.mtc_query_features(&mut tape, store, q));
        let cls = p.encode_text_var(&mut tape, store, &text_ids(models, &e.text)?)?;
        ts.push(p.mtc_text_features(&mut tape, store, cls));
    }
    let s = mtc_similarity(&mut tape, &qs, &ts, 1.0);
    let ids: Vec<String> = pairs.iter().map(|e| e.id.clone()).collect();
    SimilarityMatrix::new(tape.value(s).clone(), ids.clone(), ids).map_err(|e| PipelineError::Data(e.to_string()))
}

/// Matched-minus-unmatched logit of the matching head.
pub fn matching_score(models: &Models, x: &AtomicRepresentations, text: &str) -> Result<f64, PipelineError> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.0.clone());
    let fused = models.projector.fuse_var(&mut tape, &models.store, xv, &text_ids(models, text)?)?;
    let logits = models.projector.itm_logits(&mut tape, &models.store, fused);
    let l = tape.value(logits);
    Ok(l.get(0, 1) - l.get(0, 0))
}

/// Greedy response to `prompt`. Modes that use the molecule need its
/// coordinates.
pub fn generate_response(
    models: &Models,
    molecule: Option<&Molecule>,
    smiles: Option<&str>,
    prompt: &str,
    mode: PromptMode,
    max_new: usize,
) -> Result<String, PipelineError> {
    let mol = if mode.uses_mol() {
        let m = molecule.ok_or(MolError::CoordsUnset)?;
        m.coords()?;
        let x = models.encoder.encode(&models.store, m)?;
        Some(models.projector.project(&models.store, &x)?)
    } else {
        None
    };
    let seq = compose_mixed_sequence(
        models.lm.vocab(),
        mol.as_ref().map(|q| q.0.rows()),
        if mode.uses_smiles() { smiles } else { None },
        prompt,
        None,
        mode,
        models.lm.config().max_seq_len,
    )?;
    Ok(models.lm.greedy_generate(&models.store, &seq, mol.as_ref(), max_new)?)
}

/// Caption from the projector's own text decoder (stage-1 checkpoints).
pub fn caption_with_projector(models: &Models, molecule: &Molecule, max_len: usize) -> Result<String, PipelineError> {
    let x = models.encoder.encode(&models.store, molecule)?;
    let ids = models.projector.generate_caption(&models.store, &x, max_len)?;
    Ok(models.lm.vocab().decode_response(&ids).map_err(LmError::from)?)
}
