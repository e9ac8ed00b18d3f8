use std::collections::BTreeSet;

use sha2::{Digest, Sha256};

use super::MoitError;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Split {
    pub train: BTreeSet<String>,
    pub valid: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Position of `id` in `[0, 1)` from `sha256(seed ‖ id)`.
fn unit_hash(id: &str, seed: u64) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    let d = h.finalize();
    let x = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
    (x >> 11) as f64 / (1u64 << 53) as f64
}

/// Assigns each id to train/valid/test by its seeded hash position against
/// the cumulative ratios.
pub fn deterministic_split<'a, I>(ids: I, ratios: (f64, f64, f64), seed: u64) -> Result<Split, MoitError>
where
    I: IntoIterator<Item = &'a str>,
{
    let (a, b, c) = ratios;
    if !(a > 0.0 && b > 0.0 && c > 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(MoitError::BadRatios);
    }
    let mut split = Split::default();
    for id in ids {
        let u = unit_hash(id, seed);
        let set = if u < a {
            &mut split.train
        } else if u < a + b {
            &mut split.valid
        } else {
            &mut split.test
        };
        set.insert(id.to_string());
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_and_partition() {
        let ids: Vec<String> = (0..1000).map(|i| format!("mol{i}")).collect();
        let s = deterministic_split(ids.iter().map(String::as_str), (0.8, 0.1, 0.1), 7).unwrap();
        assert!((770..=830).contains(&s.train.len()), "{}", s.train.len());
        assert!((70..=130).contains(&s.valid.len()));
        assert!((70..=130).contains(&s.test.len()));
        assert_eq!(s.len(), 1000);
        assert!(s.train.is_disjoint(&s.valid) && s.train.is_disjoint(&s.test) && s.valid.is_disjoint(&s.test));
        let again = deterministic_split(ids.iter().map(String::as_str), (0.8, 0.1, 0.1), 7).unwrap();
        assert_eq!(s, again);
        let other = deterministic_split(ids.iter().map(String::as_str), (0.8, 0.1, 0.1), 8).unwrap();
        assert_ne!(s, other);
    }

    #[test]
    fn bad_ratios() {
        assert_eq!(deterministic_split(["a"], (0.5, 0.5, 0.0), 0), Err(MoitError::BadRatios));
        assert_eq!(deterministic_split(["a"], (0.5, 0.4, 0.2), 0), Err(MoitError::BadRatios));
    }
}
