use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::tensor::Tensor;

/// Molecule-by-text scores with their ids.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    values: Tensor,
    row_ids: Vec<String>,
    col_ids: Vec<String>,
}

impl SimilarityMatrix {
    pub fn new(values: Tensor, row_ids: Vec<String>, col_ids: Vec<String>) -> Result<Self, EvalError> {
        if row_ids.len() != values.rows() || col_ids.len() != values.cols() {
            return Err(EvalError::BadMatrix("id count does not match shape".into()));
        }
        if !values.all_finite() {
            return Err(EvalError::BadMatrix("non-finite score".into()));
        }
        for ids in [&row_ids, &col_ids] {
            if ids.iter().collect::<BTreeSet<_>>().len() != ids.len() {
                return Err(EvalError::BadMatrix("duplicate id".into()));
            }
        }
        Ok(Self { values, row_ids, col_ids })
    }

    /// Ids `0..n` for a square matrix.
    pub fn from_scores(values: Tensor) -> Result<Self, EvalError> {
        let rows = (0..values.rows()).map(|i| i.to_string()).collect();
        let cols = (0..values.cols()).map(|i| i.to_string()).collect();
        Self::new(values, rows, cols)
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn col_ids(&self) -> &[String] {
        &self.col_ids
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalScores {
    pub acc: f64,
    pub recall_at_k: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DirectionReport {
    pub in_batch: RetrievalScores,
    pub full: RetrievalScores,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub m2t: DirectionReport,
    pub t2m: DirectionReport,
    pub k: usize,
    pub batch_size: usize,
}

/// 1-based rank of `cands[target]` among `cands` scored by `score`: one plus
/// the number of strictly better candidates plus tied candidates with a
/// lower index.
fn rank_of(cands: &[usize], target: usize, score: impl Fn(usize) -> f64) -> usize {
    let s = score(target);
    1 + cands.iter().filter(|&&c| c != target && (score(c) > s || (score(c) == s && c < target))).count()
}

fn scores_over(groups: &[Vec<usize>], s: &Tensor, k: usize, m2t: bool) -> RetrievalScores {
    let (mut top1, mut topk, mut n) = (0usize, 0usize, 0usize);
    for g in groups {
        for &i in g {
            let r = if m2t { rank_of(g, i, |j| s.get(i, j)) } else { rank_of(g, i, |j| s.get(j, i)) };
            top1 += usize::from(r == 1);
            topk += usize::from(r <= k);
            n += 1;
        }
    }
    RetrievalScores { acc: top1 as f64 / n as f64, recall_at_k: topk as f64 / n as f64 }
}

/// Accuracy and Recall@k in both directions, within seeded batches of
/// `batch_size` pairs and over the full set. Pair `i` is (row `i`, column `i`).
pub fn retrieval_report(s: &SimilarityMatrix, k: usize, batch_size: usize, seed: u64) -> Result<RetrievalReport, EvalError> {
    let (rows, cols) = s.values.shape();
    if rows != cols {
        return Err(EvalError::NonSquare { rows, cols });
    }
    if rows == 0 {
        return Err(EvalError::EmptyInput);
    }
    if batch_size == 0 {
        return Err(EvalError::ZeroBatch);
    }
    if k == 0 || k > batch_size {
        return Err(EvalError::KTooLarge { k, batch_size });
    }
    let mut order: Vec<usize> = (0..rows).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    let full = vec![(0..rows).collect::<Vec<_>>()];
    let v = &s.values;
    Ok(RetrievalReport {
        m2t: DirectionReport { in_batch: scores_over(&batches, v, k, true), full: scores_over(&full, v, k, true) },
        t2m: DirectionReport { in_batch: scores_over(&batches, v, k, false), full: scores_over(&full, v, k, false) },
        k,
        batch_size,
    })
}

/// For each row, rescores its `top_k` columns with `score(row, col)` and
/// lifts them above every other column, keeping the rest unchanged.
pub fn rerank_top_k(s: &SimilarityMatrix, top_k: usize, mut score: impl FnMut(usize, usize) -> f64) -> SimilarityMatrix {
    let v = &s.values;
    let mut out = v.clone();
    let (lo, hi) = v.data().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let lift = hi - lo + 1.0;
    for i in 0..v.rows() {
        let mut cols: Vec<usize> = (0..v.cols()).collect();
        cols.sort_by(|&a, &b| v.get(i, b).total_cmp(&v.get(i, a)).then(a.cmp(&b)));
        let picked: Vec<usize> = cols.into_iter().take(top_k).collect();
        let rescored: Vec<f64> = picked.iter().map(|&j| score(i, j)).collect();
        let (rlo, rhi) = rescored.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        let span = if rhi > rlo { rhi - rlo } else { 1.0 };
        for (&j, r) in picked.iter().zip(rescored) {
            out.set(i, j, hi + lift * (1.0 + (r - rlo) / span));
        }
    }
    SimilarityMatrix { values: out, row_ids: s.row_ids.clone(), col_ids: s.col_ids.clone() }
}
