//! Seeded randomness helpers.
//!
//! All randomness in the crate flows through explicit seeds and ChaCha8
//! streams, so a run is a pure function of its configuration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Draw `count` distinct indices from `0..population` by partial
/// Fisher-Yates. Output order is the draw order.
pub fn sample_without_replacement(seed: u64, population: usize, count: usize) -> Vec<usize> {
    let mut r = rng(seed);
    sample_without_replacement_with(&mut r, population, count)
}

pub fn sample_without_replacement_with(
    rng: &mut ChaCha8Rng,
    population: usize,
    count: usize,
) -> Vec<usize> {
    assert!(count <= population, "cannot draw {count} from {population}");
    let mut indices: Vec<usize> = (0..population).collect();
    for i in 0..count {
        let j = rng.gen_range(i..population);
        indices.swap(i, j);
    }
    indices.truncate(count);
    indices
}

/// In-place seeded Fisher-Yates shuffle.
pub fn shuffle<T>(rng: &mut ChaCha8Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}
