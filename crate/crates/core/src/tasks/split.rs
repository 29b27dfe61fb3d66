use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits<T> {
    pub train: Vec<T>,
    pub valid: Vec<T>,
    pub test: Vec<T>,
}

/// Seeded shuffle, then sizes `floor(n * r)` with the remainder handed out
/// one at a time to train, valid, test in turn.
pub fn split_dataset<T: Clone>(items: &[T], ratios: (f64, f64, f64), seed: u64) -> Result<Splits<T>> {
    let n = items.len();
    if n < 3 {
        return Err(invalid(format!("need at least 3 items to split, got {n}")));
    }
    let r = [ratios.0, ratios.1, ratios.2];
    if r.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(invalid(format!("split ratios must be positive: {ratios:?}")));
    }
    if (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("split ratios must sum to 1: {ratios:?}")));
    }
    let mut sizes = r.map(|x| (n as f64 * x + 1e-9).floor() as usize);
    let mut k = 0;
    while sizes.iter().sum::<usize>() < n {
        sizes[k % 3] += 1;
        k += 1;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect::<Vec<_>>();
    Ok(Splits {
        train: pick(&order[..sizes[0]]),
        valid: pick(&order[sizes[0]..sizes[0] + sizes[1]]),
        test: pick(&order[sizes[0] + sizes[1]..]),
    })
}
