//! Seeded random numbers.
//!
//! The generator is ChaCha8 keyed from a 64-bit seed; equal seeds give
//! bit-identical draw sequences on every platform.

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Distribution {
    /// Uniform on `[low, high)`.
    Uniform { low: f64, high: f64 },
    Gaussian { mean: f64, stddev: f64 },
}

impl Distribution {
    pub fn uniform(low: f64, high: f64) -> Self {
        Distribution::Uniform { low, high }
    }

    pub fn gaussian(mean: f64, stddev: f64) -> Self {
        Distribution::Gaussian { mean, stddev }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Distribution::Uniform { low, high } if !(low < high) => Err(Error::invalid(format!(
                "uniform bounds must satisfy low < high, got [{low}, {high})"
            ))),
            Distribution::Gaussian { stddev, .. } if !(stddev > 0.0) => Err(Error::invalid(format!(
                "gaussian stddev must be positive, got {stddev}"
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream derived from this generator's current state.
    pub fn fork(&mut self) -> Rng {
        Rng::new(self.inner.random())
    }

    /// Uniform draw on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.uniform()
    }

    pub fn gaussian(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    pub fn sample(&mut self, dist: Distribution) -> f64 {
        match dist {
            Distribution::Uniform { low, high } => {
                // Rounding in the affine map can land exactly on `high`.
                let v = self.uniform_range(low, high);
                if v >= high {
                    low
                } else {
                    v
                }
            }
            Distribution::Gaussian { mean, stddev } => mean + stddev * self.gaussian(),
        }
    }
}
