use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Seeded random stream. ChaCha8 keeps the sample sequence identical across
/// platforms for a given `(seed, stream)`.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream derived from the same seed.
    pub fn stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn normal(&mut self, mean: f32, std: f32) -> f32 {
        let z: f64 = StandardNormal.sample(&mut self.inner);
        mean + std * z as f32
    }

    pub fn uniform(&mut self, lo: f32, hi: f32) -> f32 {
        let u: f64 = self.inner.random();
        lo + (hi - lo) * u as f32
    }

    pub fn uniform_f64(&mut self) -> f64 {
        self.inner.random()
    }

    /// Uniform integer in `lo..=hi`.
    pub fn range_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        self.inner.random_range(lo..=hi)
    }

    /// Fisher-Yates permutation of `0..len`.
    pub fn permutation(&mut self, len: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..len).collect();
        for i in (1..len).rev() {
            let j = self.inner.random_range(0..=i);
            idx.swap(i, j);
        }
        idx
    }
}
