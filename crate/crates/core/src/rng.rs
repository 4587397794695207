//! Seed derivation and fold assignment.
//!
//! Every random stream in the crate is a ChaCha8 generator seeded from a
//! 64-bit value, and sub-streams are derived by mixing a parent seed with
//! integer tags. Work can therefore run in any order or on any number of
//! threads and still draw the same numbers.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// splitmix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fold a sequence of tags into a parent seed.
pub fn derive_seed(parent: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(mix64(parent), |acc, &t| mix64(acc ^ mix64(t)))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Shuffle `0..n` with the seeded generator and cut it into `k` contiguous
/// folds whose sizes differ by at most one. Indices inside each fold are
/// returned sorted.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::contract(format!("need at least 2 folds, got {k}")));
    }
    if k > n {
        return Err(Error::contract(format!(
            "{k} folds requested for {n} points; every fold needs at least one point"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from_seed(seed));
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let mut fold = idx[start..start + len].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += len;
    }
    Ok(folds)
}

/// Indices not in `fold`, in increasing order.
pub fn complement(n: usize, fold: &[usize]) -> Vec<usize> {
    let mut mask = vec![true; n];
    for &i in fold {
        mask[i] = false;
    }
    (0..n).filter(|&i| mask[i]).collect()
}
