use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
            return Err(DataError::Config(format!("split fractions must be positive, got {parts:?}")));
        }
        let total: f64 = parts.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(DataError::Config(format!("split fractions sum to {total}, not 1")));
        }
        Ok(())
    }
}

/// Stratified train/validation/test split. Each label stratum is shuffled
/// with `seed` and cut by the fractions; claims keep their original relative
/// order inside each split.
pub fn split(dataset: &Dataset, fractions: SplitFractions, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    fractions.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts: [Vec<usize>; 3] = Default::default();
    for label in [0u8, 1] {
        let mut idx: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.claims[i].label == label)
            .collect();
        idx.shuffle(&mut rng);
        let n = idx.len() as f64;
        let n_train = (n * fractions.train).round() as usize;
        let n_val = ((n * fractions.val).round() as usize).min(idx.len() - n_train);
        parts[0].extend_from_slice(&idx[..n_train]);
        parts[1].extend_from_slice(&idx[n_train..n_train + n_val]);
        parts[2].extend_from_slice(&idx[n_train + n_val..]);
    }
    let [train, val, test] = parts.map(|mut p| {
        p.sort_unstable();
        Dataset::new(p.into_iter().map(|i| dataset.claims[i].clone()).collect())
    });
    Ok((train, val, test))
}
