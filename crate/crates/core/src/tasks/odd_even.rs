use std::ops::RangeInclusive;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::SequencePair;
use super::vocab::{VocabFile, Vocabulary, END_ID, SEP_ID, SPECIALS};
use super::{invalid, Result};

/// Largest odd input value.
pub const MAX_ODD: u32 = 49;
const ODD_COUNT: usize = (MAX_ODD as usize).div_ceil(2);
/// Largest reachable output: 2 * 49 followed by ten increments of 2.
const MAX_EVEN: u32 = 118;

/// Input vocabulary: odds 1..=49. Output vocabulary: evens 2..=118.
pub fn odd_even_vocab() -> VocabFile {
    let input = Vocabulary::with_tokens((1..=MAX_ODD).step_by(2).map(|x| x.to_string()));
    let output = Vocabulary::with_tokens((2..=MAX_EVEN).step_by(2).map(|x| x.to_string()));
    VocabFile::new(input, output)
}

/// First half doubled, then each entry two more than the previous one. A
/// single input is doubled.
pub fn odd_even_target(xs: &[u32]) -> Vec<u32> {
    let half = (xs.len() / 2).max(1);
    let mut ys: Vec<u32> = Vec::with_capacity(xs.len());
    for (n, &x) in xs.iter().enumerate() {
        let y = if n < half { 2 * x } else { ys[n - 1] + 2 };
        ys.push(y);
    }
    ys
}

fn odd_id(x: u32) -> usize {
    SPECIALS.len() + (x as usize - 1) / 2
}

fn even_id(y: u32) -> usize {
    SPECIALS.len() + (y as usize - 2) / 2
}

/// `count` pairs with lengths uniform in `lengths`, inputs drawn without
/// replacement from the odd numbers.
pub fn gen_odd_even(count: usize, seed: u64, lengths: RangeInclusive<usize>) -> Result<Vec<SequencePair>> {
    if count == 0 {
        return Err(invalid("odd-even count must be positive"));
    }
    if lengths.is_empty() || *lengths.start() == 0 || *lengths.end() > ODD_COUNT {
        return Err(invalid(format!(
            "odd-even lengths {lengths:?} must lie within 1..={ODD_COUNT}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut odds: Vec<u32> = (1..=MAX_ODD).step_by(2).collect();
    let mut pairs = Vec::with_capacity(count);
    for _ in 0..count {
        let len = rng.gen_range(lengths.clone());
        let (xs, _) = odds.partial_shuffle(&mut rng, len);
        let xs = xs.to_vec();
        let ys = odd_even_target(&xs);
        let mut input: Vec<usize> = xs.iter().map(|&x| odd_id(x)).collect();
        input.push(SEP_ID);
        let mut target: Vec<usize> = ys.iter().map(|&y| even_id(y)).collect();
        target.push(END_ID);
        pairs.push(SequencePair { input, target });
    }
    Ok(pairs)
}
