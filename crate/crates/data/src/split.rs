use rand::seq::SliceRandom;

use ribforge_core::seeded;

use crate::error::{DataError, Result};

pub const MIN_SPLIT_SAMPLES: usize = 5;

/// Sizes of the train/validation/test partitions for `n` items in a 6:2:2
/// ratio: `⌊0.6n⌋`, `⌊0.2n⌋` and the remainder.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 6 / 10;
    let val = n * 2 / 10;
    (train, val, n - train - val)
}

/// Seeded shuffle followed by a 6:2:2 partition.
pub fn split_dataset<T>(mut items: Vec<T>, seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    if items.len() < MIN_SPLIT_SAMPLES {
        return Err(DataError::TooFewSamples { min: MIN_SPLIT_SAMPLES, got: items.len() });
    }
    items.shuffle(&mut seeded(seed));
    let (a, b, _) = split_sizes(items.len());
    let test = items.split_off(a + b);
    let val = items.split_off(a);
    Ok((items, val, test))
}
