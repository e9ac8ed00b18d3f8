use rand::distributions::{Distribution, WeightedIndex};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::PipelineError;

/// `p_i ∝ sizes_i^(1/4)`.
pub fn fourth_root_probs(sizes: &[usize]) -> Result<Vec<f64>, PipelineError> {
    if sizes.is_empty() {
        return Err(PipelineError::EmptyInput);
    }
    if sizes.contains(&0) {
        return Err(PipelineError::Data("dataset sizes must be positive".into()));
    }
    // sqrt(sqrt(x)) is exact for perfect fourth powers, unlike powf(0.25).
    let roots: Vec<f64> = sizes.iter().map(|&n| (n as f64).sqrt().sqrt()).collect();
    let z: f64 = roots.iter().sum();
    Ok(roots.into_iter().map(|r| r / z).collect())
}

/// Seeded draws of a dataset index.
#[derive(Clone, Debug)]
pub struct MixtureSampler {
    probs: Vec<f64>,
    dist: WeightedIndex<f64>,
    rng: ChaCha8Rng,
    counts: Vec<usize>,
}

impl MixtureSampler {
    pub fn new(probs: Vec<f64>, seed: u64) -> Result<Self, PipelineError> {
        let dist = WeightedIndex::new(&probs).map_err(|e| PipelineError::Data(format!("sampling weights: {e}")))?;
        let counts = vec![0; probs.len()];
        Ok(Self { probs, dist, rng: ChaCha8Rng::seed_from_u64(seed), counts })
    }

    pub fn fourth_root(sizes: &[usize], seed: u64) -> Result<Self, PipelineError> {
        Self::new(fourth_root_probs(sizes)?, seed)
    }

    pub fn draw(&mut self) -> usize {
        let i = self.dist.sample(&mut self.rng);
        self.counts[i] += 1;
        i
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn empirical(&self) -> Vec<f64> {
        let n: usize = self.counts.iter().sum();
        self.counts.iter().map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 }).collect()
    }
}
