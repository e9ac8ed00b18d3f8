use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::EvalError;

/// Lowercases, then splits into alphanumeric runs and single punctuation
/// characters; whitespace separates and is dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars().flat_map(char::to_lowercase) {
        if c.is_alphanumeric() {
            cur.push(c);
            continue;
        }
        if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
        if !c.is_whitespace() {
            out.push(c.to_string());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn ngrams<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped n-gram matches and the candidate's n-gram count.
pub fn modified_precision<S: AsRef<str>>(candidate: &[S], reference: &[S], n: usize) -> (usize, usize) {
    let c = ngrams(candidate, n);
    let r = ngrams(reference, n);
    let matched = c.iter().map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0))).sum();
    (matched, candidate.len().saturating_sub(n - 1))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Smoothing {
    None,
    /// Orders above one with no match count as `1 / (total + 1)`.
    #[default]
    AddOneZeroCounts,
}

fn combine(counts: &[(usize, usize)], cand_len: usize, ref_len: usize, smoothing: Smoothing) -> f64 {
    let mut log_sum = 0.0;
    for (i, &(m, t)) in counts.iter().enumerate() {
        let (m, t) = if m == 0 && i > 0 && smoothing == Smoothing::AddOneZeroCounts { (1, t + 1) } else { (m, t) };
        if m == 0 || t == 0 {
            return 0.0;
        }
        log_sum += (m as f64 / t as f64).ln();
    }
    let bp = if cand_len > ref_len { 1.0 } else { (1.0 - ref_len as f64 / cand_len as f64).exp() };
    bp * (log_sum / counts.len() as f64).exp()
}

fn check_order(max_n: usize) -> Result<(), EvalError> {
    if max_n == 0 || max_n > 4 {
        return Err(EvalError::BadOrder(max_n));
    }
    Ok(())
}

/// Sentence BLEU with uniform weights up to `max_n` and a brevity penalty.
pub fn bleu<S: AsRef<str>>(candidate: &[S], reference: &[S], max_n: usize, smoothing: Smoothing) -> Result<f64, EvalError> {
    check_order(max_n)?;
    if candidate.is_empty() {
        return Err(EvalError::EmptyCandidate);
    }
    let counts: Vec<_> = (1..=max_n).map(|n| modified_precision(candidate, reference, n)).collect();
    Ok(combine(&counts, candidate.len(), reference.len(), smoothing))
}

/// Corpus BLEU: clipped counts and lengths summed over all pairs.
pub fn corpus_bleu(pairs: &[(Vec<String>, Vec<String>)], max_n: usize, smoothing: Smoothing) -> Result<f64, EvalError> {
    check_order(max_n)?;
    if pairs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut counts = vec![(0, 0); max_n];
    let (mut c_len, mut r_len) = (0, 0);
    for (c, r) in pairs {
        for (n, slot) in counts.iter_mut().enumerate() {
            let (m, t) = modified_precision(c, r, n + 1);
            slot.0 += m;
            slot.1 += t;
        }
        c_len += c.len();
        r_len += r.len();
    }
    if c_len == 0 {
        return Err(EvalError::EmptyCandidate);
    }
    Ok(combine(&counts, c_len, r_len, smoothing))
}

fn f1(overlap: f64, c: f64, r: f64) -> f64 {
    if overlap == 0.0 {
        return 0.0;
    }
    let (p, rec) = (overlap / c, overlap / r);
    2.0 * p * rec / (p + rec)
}

/// N-gram overlap F1 for `n` in {1, 2}.
pub fn rouge_n<S: AsRef<str>>(candidate: &[S], reference: &[S], n: usize) -> Result<f64, EvalError> {
    if !(1..=2).contains(&n) {
        return Err(EvalError::BadOrder(n));
    }
    if candidate.is_empty() || reference.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let (m, c_total) = modified_precision(candidate, reference, n);
    let r_total = reference.len().saturating_sub(n - 1);
    if c_total == 0 || r_total == 0 {
        return Ok(0.0);
    }
    Ok(f1(m as f64, c_total as f64, r_total as f64))
}

fn lcs<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0; b.len() + 1];
    for x in a {
        let mut cur = vec![0; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        prev = cur;
    }
    prev[b.len()]
}

/// Longest-common-subsequence F1.
pub fn rouge_l<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> Result<f64, EvalError> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    Ok(f1(lcs(candidate, reference) as f64, candidate.len() as f64, reference.len() as f64))
}

const METEOR_ALPHA: f64 = 0.9;
const METEOR_GAMMA: f64 = 0.5;
const METEOR_BETA: i32 = 3;

/// Exact-match alignment built by repeatedly taking the longest common run
/// of unaligned tokens (earliest candidate position, then earliest reference
/// position, on ties). Returns `(candidate, reference)` index pairs sorted
/// by candidate position.
fn align<S: AsRef<str>>(c: &[S], r: &[S]) -> Vec<(usize, usize)> {
    let mut used_c = vec![false; c.len()];
    let mut used_r = vec![false; r.len()];
    let mut pairs = Vec::new();
    loop {
        let mut best = (0, 0, 0);
        for i in 0..c.len() {
            for j in 0..r.len() {
                let mut len = 0;
                while i + len < c.len()
                    && j + len < r.len()
                    && !used_c[i + len]
                    && !used_r[j + len]
                    && c[i + len].as_ref() == r[j + len].as_ref()
                {
                    len += 1;
                }
                if len > best.2 {
                    best = (i, j, len);
                }
            }
        }
        let (i, j, len) = best;
        if len == 0 {
            break;
        }
        for k in 0..len {
            used_c[i + k] = true;
            used_r[j + k] = true;
            pairs.push((i + k, j + k));
        }
    }
    pairs.sort_unstable();
    pairs
}

/// METEOR without stemming or synonyms: `F_mean · (1 − γ·(chunks/m)^β)` with
/// `F_mean = P·R / (α·P + (1−α)·R)`.
pub fn meteor_lite<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> f64 {
    let pairs = align(candidate, reference);
    let m = pairs.len();
    if m == 0 {
        return 0.0;
    }
    let chunks = 1 + pairs.windows(2).filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1)).count();
    let p = m as f64 / candidate.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let f_mean = p * r / (METEOR_ALPHA * p + (1.0 - METEOR_ALPHA) * r);
    let penalty = METEOR_GAMMA * (chunks as f64 / m as f64).powi(METEOR_BETA);
    f_mean * (1.0 - penalty)
}

/// Caption metrics over `(generated, reference)` pairs; BLEU is corpus-level,
/// the rest are means of per-pair scores. All values lie in `[0, 1]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CaptionReport {
    pub bleu2: f64,
    pub bleu4: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub meteor: f64,
    pub count: usize,
}

pub fn caption_report(pairs: &[(String, String)]) -> Result<CaptionReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let toks: Vec<(Vec<String>, Vec<String>)> = pairs.iter().map(|(c, r)| (tokenize(c), tokenize(r))).collect();
    let n = toks.len() as f64;
    let mean = |f: &dyn Fn(&[String], &[String]) -> f64| toks.iter().map(|(c, r)| f(c, r)).sum::<f64>() / n;
    // Empty generations score zero rather than failing the whole report.
    let safe = |res: Result<f64, EvalError>| res.unwrap_or(0.0);
    Ok(CaptionReport {
        bleu2: corpus_bleu(&toks, 2, Smoothing::AddOneZeroCounts).or_else(|e| if e == EvalError::EmptyCandidate { Ok(0.0) } else { Err(e) })?,
        bleu4: corpus_bleu(&toks, 4, Smoothing::AddOneZeroCounts).or_else(|e| if e == EvalError::EmptyCandidate { Ok(0.0) } else { Err(e) })?,
        rouge1: mean(&|c, r| safe(rouge_n(c, r, 1))),
        rouge2: mean(&|c, r| safe(rouge_n(c, r, 2))),
        rouge_l: mean(&|c, r| safe(rouge_l(c, r))),
        meteor: mean(&|c, r| meteor_lite(c, r)),
        count: pairs.len(),
    })
}
