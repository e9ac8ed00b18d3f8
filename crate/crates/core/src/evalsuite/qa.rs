use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::EvalError;

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?").expect("valid pattern"))
}

/// First numeric literal in `response` (optional sign, decimals, optional
/// exponent), or `None`.
pub fn extract_numeric(response: &str) -> Option<f64> {
    number_re().find_iter(response).find_map(|m| m.as_str().parse::<f64>().ok())
}

pub fn count_numeric(text: &str) -> usize {
    number_re().find_iter(text).count()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QAPair {
    pub gold: f64,
    pub response: String,
    pub unit: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QaReport {
    /// Mean absolute error over responses with a number; `None` if there are
    /// none.
    pub mae: Option<f64>,
    /// Percentage of responses containing a number.
    pub valid_rate: f64,
    pub count: usize,
    pub valid: usize,
}

pub fn qa_report(pairs: &[QAPair]) -> Result<QaReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut errors: Vec<f64> = pairs.iter().filter_map(|p| extract_numeric(&p.response).map(|v| (v - p.gold).abs())).collect();
    // Summing in sorted order makes the mean independent of pair order.
    errors.sort_by(f64::total_cmp);
    let valid = errors.len();
    let mae = (valid > 0).then(|| errors.iter().sum::<f64>() / valid as f64);
    Ok(QaReport { mae, valid_rate: 100.0 * valid as f64 / pairs.len() as f64, count: pairs.len(), valid })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(gold: f64, response: &str) -> QAPair {
        QAPair { gold, response: response.into(), unit: String::new() }
    }

    #[test]
    fn extraction() {
        assert_eq!(extract_numeric("The HOMO-LUMO Gap for the input molecule is 5.762 eV."), Some(5.762));
        assert_eq!(extract_numeric("I cannot determine this."), None);
        assert_eq!(extract_numeric("approximately -3.2e-1 eV"), Some(-0.32));
        assert_eq!(extract_numeric("is .5 or so"), Some(0.5));
        assert_eq!(extract_numeric("The Complexity for the input molecule is 37."), Some(37.0));
        assert_eq!(extract_numeric("+12 units"), Some(12.0));
        assert_eq!(count_numeric("1 and 2.5e3 and -4"), 3);
    }

    #[test]
    fn single_pair_arithmetic() {
        let r = qa_report(&[pair(286.28, "Input molecule has a Molecular Weight of 288.30 g/mol.")]).unwrap();
        assert_eq!(r.mae, Some((288.30f64 - 286.28).abs()));
        assert_eq!(format!("{:.2}", r.mae.unwrap()), "2.02");
        let r = qa_report(&[pair(5.325, "The HOMO-LUMO Gap for the input molecule is 5.762 eV.")]).unwrap();
        assert_eq!(r.mae, Some((5.762f64 - 5.325).abs()));
        assert_eq!(format!("{:.3}", r.mae.unwrap()), "0.437");
        assert_eq!(r.valid_rate, 100.0);
    }

    #[test]
    fn invalid_responses() {
        let r = qa_report(&[pair(1.0, "2.0"), pair(1.0, "no idea"), pair(3.0, "value 6")]).unwrap();
        assert!((r.valid_rate - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.mae, Some(2.0));
        let none = qa_report(&[pair(1.0, "none")]).unwrap();
        assert_eq!((none.mae, none.valid_rate), (None, 0.0));
        assert_eq!(qa_report(&[]), Err(EvalError::EmptyInput));
    }

    #[test]
    fn permutation_invariant() {
        let ps = vec![pair(0.1, "0.3"), pair(2.0, "1.7"), pair(5.0, "x"), pair(-1.0, "-1.25"), pair(9.9, "10.05")];
        let base = qa_report(&ps).unwrap();
        let mut rev = ps.clone();
        rev.reverse();
        assert_eq!(qa_report(&rev).unwrap(), base);
        rev.swap(0, 3);
        assert_eq!(qa_report(&rev).unwrap(), base);
    }
}
