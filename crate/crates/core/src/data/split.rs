use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::SequencedSample;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct DatasetSplit {
    pub train: Vec<SequencedSample>,
    pub test: Vec<SequencedSample>,
    pub seed: u64,
}

/// Seeded entity-level shuffle split; `round(n * ratio)` samples go to train,
/// clamped so both sides are nonempty.
pub fn split(samples: &[SequencedSample], ratio: f64, seed: u64) -> Result<DatasetSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::config("split_ratio", format!("{ratio} is not in (0, 1)")));
    }
    if samples.len() < 2 {
        return Err(Error::Split(format!("need at least 2 samples, got {}", samples.len())));
    }
    let n = samples.len();
    let n_train = ((n as f64 * ratio).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (tr, te) = idx.split_at(n_train);
    Ok(DatasetSplit {
        train: tr.iter().map(|&i| samples[i].clone()).collect(),
        test: te.iter().map(|&i| samples[i].clone()).collect(),
        seed,
    })
}
