use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::IngestError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// Validation and test sizes: `max(1, floor(n·100/907))` each.
pub fn split_sizes(n: usize) -> Result<(usize, usize, usize), IngestError> {
    if n < 3 {
        return Err(IngestError::TooFewPieces(n));
    }
    let held = (n * 100 / 907).max(1);
    Ok((n - 2 * held, held, held))
}

/// Shuffles with `seed`, then takes validation, test and the remainder as
/// training, in that order.
pub fn split_dataset<T: Clone>(items: &[T], seed: u64) -> Result<Split<T>, IngestError> {
    let (_, n_val, n_test) = split_sizes(items.len())?;
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect::<Vec<_>>();
    Ok(Split {
        val: pick(&order[..n_val]),
        test: pick(&order[n_val..n_val + n_test]),
        train: pick(&order[n_val + n_test..]),
    })
}
