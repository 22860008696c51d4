use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Tensor2;

/// Seeded counter-based random stream. Identical seed and call sequence
/// produce an identical stream; `derive` splits off independent
/// substreams for per-candidate or per-episode use.
#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
    seed: u64,
    gauss_spare: Option<f32>,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

impl Rng {
    pub fn seed(seed: u64) -> Self {
        Self { inner: ChaCha8Rng::seed_from_u64(seed), seed, gauss_spare: None }
    }

    /// Independent substream `k` of this generator's seed.
    pub fn derive(&self, k: u64) -> Self {
        Self::seed(splitmix64(self.seed ^ splitmix64(k.wrapping_add(0xa5a5_a5a5))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f32 {
        self.inner.gen::<f32>()
    }

    pub fn uniform_range(&mut self, lo: f32, hi: f32) -> f32 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    /// Standard normal via Box-Muller with a cached spare.
    pub fn normal(&mut self) -> f32 {
        if let Some(v) = self.gauss_spare.take() {
            return v;
        }
        loop {
            let u1 = self.uniform();
            if u1 <= f32::MIN_POSITIVE {
                continue;
            }
            let u2 = self.uniform();
            let r = (-2.0 * u1.ln()).sqrt();
            let theta = std::f32::consts::TAU * u2;
            self.gauss_spare = Some(r * theta.sin());
            return r * theta.cos();
        }
    }

    pub fn randn(&mut self, rows: usize, cols: usize) -> Tensor2 {
        let mut t = Tensor2::zeros(rows, cols);
        for v in t.data.iter_mut() {
            *v = self.normal();
        }
        t
    }
}
