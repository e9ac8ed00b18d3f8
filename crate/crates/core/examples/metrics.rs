//! Caption, QA and retrieval metrics on hand-made inputs.
//!
//! ```bash
//! cargo run -p molm --example metrics
//! ```

use molm::evalsuite::{caption_report, qa_report, retrieval_report, QAPair, SimilarityMatrix};
use molm::tensor::Tensor;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let captions = vec![
        ("the molecule is an aromatic alcohol".to_string(), "the molecule is an aromatic alcohol".to_string()),
        ("the molecule is a ketone".to_string(), "the molecule is a cyclic ketone".to_string()),
    ];
    println!("{:#?}", caption_report(&captions)?);

    let qa = vec![
        QAPair { gold: 286.28, response: "Input molecule has a Molecular Weight of 288.30 g/mol.".into(), unit: "g/mol".into() },
        QAPair { gold: 5.325, response: "I am not sure.".into(), unit: "eV".into() },
    ];
    println!("{:?}", qa_report(&qa)?);

    let s = Tensor::from_rows(&[vec![0.9, 0.1, 0.3], vec![0.2, 0.4, 0.8], vec![0.1, 0.7, 0.6]]);
    let r = retrieval_report(&SimilarityMatrix::from_scores(s)?, 2, 3, 0)?;
    println!("M2T acc {:.3}, T2M acc {:.3}, R@2 {:.3}", r.m2t.full.acc, r.t2m.full.acc, r.m2t.full.recall_at_k);
    Ok(())
}
