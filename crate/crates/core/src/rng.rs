//! Seeded, portable randomness.
//!
//! Every random draw in the crate goes through [`SeededRng`], a thin wrapper
//! around ChaCha8. ChaCha output is specified bit-for-bit, so a given seed
//! yields the same stream on every platform. Independent sub-streams are
//! derived with [`SeededRng::fork`] so that, for example, environment resets
//! and minibatch sampling do not perturb each other when one of them changes.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A fresh generator on the same seed but a distinct ChaCha stream.
    ///
    /// The result depends only on `(seed, stream)`, never on how much of
    /// `self` has been consumed.
    pub fn fork(&self, stream: u64) -> SeededRng {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream.wrapping_add(1));
        SeededRng {
            seed: self.seed,
            inner,
        }
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn normal_vec(&mut self, len: usize) -> Vec<f64> {
        (0..len).map(|_| self.normal()).collect()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
}
