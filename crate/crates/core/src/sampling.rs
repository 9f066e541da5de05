//! Seed derivation and block-structured Monte Carlo helpers.
//!
//! Every Monte Carlo loop in the crate is cut into fixed-size blocks, each
//! block drawing from its own generator seeded by `derive_seed(seed, block)`.
//! Results are reduced in block order, so output depends only on the master
//! seed and never on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used everywhere in the crate.
pub type Rng = ChaCha8Rng;

/// Default block length for Monte Carlo integrations.
pub const BLOCK: usize = 4096;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer applied to `(seed, index)`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Named sub-streams so different stages of one run never share draws.
pub fn substream(seed: u64, label: &str) -> u64 {
    label
        .bytes()
        .fold(seed, |acc, b| derive_seed(acc, u64::from(b)))
}

/// Splits `0..total` into `(block_index, start, len)` triples of at most `block` items.
pub fn blocks(total: usize, block: usize) -> Vec<(usize, usize, usize)> {
    let block = block.max(1);
    (0..total.div_ceil(block))
        .map(|b| {
            let start = b * block;
            (b, start, block.min(total - start))
        })
        .collect()
}

/// Maps `f` over the items, in parallel when the `parallel` feature is on.
/// Output order always matches input order.
pub fn par_map<I, T, F>(items: Vec<I>, f: F) -> Vec<T>
where
    I: Send,
    T: Send,
    F: Fn(I) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.into_iter().map(f).collect()
    }
}

/// Running sum / sum of squares for a Monte Carlo mean and its standard error.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MeanAccumulator {
    pub count: usize,
    pub sum: f64,
    pub sum_sq: f64,
}

impl MeanAccumulator {
    pub fn push(&mut self, v: f64) {
        self.count += 1;
        self.sum += v;
        self.sum_sq += v * v;
    }

    pub fn merge(&mut self, other: &MeanAccumulator) {
        self.count += other.count;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }

    /// Standard error of the mean (sample variance with n - 1).
    pub fn std_error(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        let mean = self.sum / n;
        let var = ((self.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_cover_range_exactly() {
        let b = blocks(10, 4);
        assert_eq!(b, vec![(0, 0, 4), (1, 4, 4), (2, 8, 2)]);
        assert!(blocks(0, 4).is_empty());
    }

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(7, 0);
        let b = derive_seed(7, 1);
        let c = derive_seed(8, 0);
        assert!(a != b && a != c && b != c);
        assert_eq!(a, derive_seed(7, 0));
        assert_ne!(substream(1, "design"), substream(1, "region"));
    }

    #[test]
    fn accumulator_matches_direct() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let mut acc = MeanAccumulator::default();
        xs.iter().for_each(|&x| acc.push(x));
        assert!((acc.mean() - 3.75).abs() < 1e-15);
        let var = xs.iter().map(|x| (x - 3.75f64).powi(2)).sum::<f64>() / 3.0;
        assert!((acc.std_error() - (var / 4.0).sqrt()).abs() < 1e-12);
    }
}
