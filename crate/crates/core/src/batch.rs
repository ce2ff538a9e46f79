//! Deterministic minibatch order.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Smallest batch kept; train-mode batch norm needs two samples.
pub const MIN_BATCH: usize = 2;

/// SplitMix64 finalizer over a seed and stream tags; gives independent
/// deterministic RNG streams per (seed, epoch, ...).
pub fn stream_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut z = seed;
    for &t in tags {
        z = z
            .wrapping_add(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(t.wrapping_mul(0xbf58_476d_1ce4_e5b9));
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

pub fn rng_for(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, tags))
}

/// Index batches for one epoch: a seeded shuffle of `0..n` cut into
/// chunks of `batch_size`; a trailing chunk smaller than [`MIN_BATCH`] is
/// dropped.
pub fn epoch_batches(
    n: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Vec<usize>>> {
    if batch_size < MIN_BATCH {
        return Err(Error::Config(alloc::format!(
            "batch size {batch_size} below minimum {MIN_BATCH}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, &[0xba7c, epoch]));
    Ok(order
        .chunks(batch_size)
        .filter(|c| c.len() >= MIN_BATCH)
        .map(<[usize]>::to_vec)
        .collect())
}

/// Iterator over epochs of index batches.
#[derive(Clone, Debug)]
pub struct BatchIterator {
    n: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
}

impl BatchIterator {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size < MIN_BATCH {
            return Err(Error::Config(alloc::format!(
                "batch size {batch_size} below minimum {MIN_BATCH}"
            )));
        }
        Ok(BatchIterator {
            n,
            batch_size,
            seed,
            epoch: 0,
        })
    }
}

impl Iterator for BatchIterator {
    type Item = Vec<Vec<usize>>;

    fn next(&mut self) -> Option<Self::Item> {
        let b = epoch_batches(self.n, self.batch_size, self.seed, self.epoch).ok()?;
        self.epoch += 1;
        Some(b)
    }
}
