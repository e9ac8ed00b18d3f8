//! Retrieval, caption and numeric-QA evaluation.

mod qa;
mod retrieval;
mod text;

use serde::{Deserialize, Serialize};

pub use qa::{count_numeric, extract_numeric, qa_report, QAPair, QaReport};
pub use retrieval::{rerank_top_k, retrieval_report, DirectionReport, RetrievalReport, RetrievalScores, SimilarityMatrix};
pub use text::{
    bleu, caption_report, corpus_bleu, meteor_lite, modified_precision, rouge_l, rouge_n, tokenize, CaptionReport, Smoothing,
};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("similarity matrix is {rows}x{cols}; a square matrix is required")]
    NonSquare { rows: usize, cols: usize },
    #[error("k = {k} is invalid for batches of {batch_size}")]
    KTooLarge { k: usize, batch_size: usize },
    #[error("batch size must be positive")]
    ZeroBatch,
    #[error("candidate is empty")]
    EmptyCandidate,
    #[error("empty input")]
    EmptyInput,
    #[error("unsupported n-gram order {0}")]
    BadOrder(usize),
    #[error("similarity matrix: {0}")]
    BadMatrix(String),
}

/// The JSON report written by evaluation commands; unused sections are null.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub retrieval: Option<RetrievalReport>,
    pub caption: Option<CaptionReport>,
    pub qa: Option<QaReport>,
}
