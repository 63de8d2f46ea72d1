use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Seeded train/test partition. `round(train_frac * len)` items go to the
/// training side; both sides keep the input order.
pub fn split_corpus<T: Clone>(items: &[T], train_frac: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::invalid(format!("train_frac must lie in (0, 1), got {train_frac}")));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (train_frac * items.len() as f64).round() as usize;
    let mut train_idx = order[..n_train].to_vec();
    let mut test_idx = order[n_train..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((
        train_idx.into_iter().map(|i| items[i].clone()).collect(),
        test_idx.into_iter().map(|i| items[i].clone()).collect(),
    ))
}
