//! Seeded random streams.
//!
//! ChaCha8 is used as the generator because its output is specified
//! bit-for-bit independently of platform and pointer width.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child generator whose stream depends only on `(self.seed, stream)`,
    /// not on how much of the parent stream has been consumed.
    pub fn fork(&self, stream: u64) -> Rng {
        Rng::new(derive_seed(self.seed, stream))
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn unit(&mut self) -> f64 {
        (self.inner.random::<u64>() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let v = lo + (hi - lo) * self.unit();
        if v >= hi {
            hi.next_down().max(lo)
        } else {
            v
        }
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.inner);
        mean + std * z
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.unit() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// SplitMix64 finalizer over `(seed, stream)`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// I.i.d. uniform `[lo, hi)` entries.
pub fn sample_uniform(rng: &mut Rng, lo: f64, hi: f64, rows: usize, cols: usize) -> Result<Matrix> {
    if !(lo < hi) {
        return Err(Error::Range(format!("uniform range requires lo < hi, got [{lo}, {hi})")));
    }
    let data = (0..rows * cols).map(|_| rng.uniform(lo, hi)).collect();
    Ok(Matrix::from_vec(rows, cols, data))
}

pub fn sample_normal(rng: &mut Rng, mean: f64, std: f64, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.normal(mean, std)).collect();
    Matrix::from_vec(rows, cols, data)
}
