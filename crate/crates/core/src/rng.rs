//! The lab's single source of randomness.
//!
//! `LabRng` (stream version `memlab-rng-v1`) is ChaCha8 as implemented by
//! `rand_chacha` 0.9, seeded through `SeedableRng::seed_from_u64`. Every
//! derived draw below is defined on top of the raw `next_u64` stream so that
//! sequences can be replayed by any implementation of ChaCha8:
//!
//! * `uniform_f64`: `(next_u64 >> 11) * 2^-53`, a value in `[0, 1)`.
//! * `below(n)`: rejection sampling on `next_u64` against the largest
//!   multiple of `n` that fits in 64 bits, then `% n`.
//! * `normal`: Box-Muller on two `uniform_f64` draws (cosine branch only).
//! * `shuffle`: Fisher-Yates from the back, using `below(i + 1)`.
//! * `categorical`: inverse CDF on one `uniform_f64` draw.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

pub const RNG_VERSION: &str = "memlab-rng-v1";

#[derive(Clone, Debug)]
pub struct LabRng {
    inner: ChaCha8Rng,
}

impl LabRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Derives an independent stream for a labelled sub-task, so that adding
    /// draws to one stage never shifts the draws of another.
    pub fn derive(seed: u64, label: &str) -> Self {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in label.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        Self::new(seed ^ h.rotate_left(17))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`. Panics if `n == 0`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.next_u64();
            if x < zone {
                return x % n;
            }
        }
    }

    pub fn below_usize(&mut self, n: usize) -> usize {
        self.below(n as u64) as usize
    }

    pub fn normal(&mut self) -> f64 {
        // 1 - u keeps the log argument in (0, 1].
        let u1 = 1.0 - self.uniform_f64();
        let u2 = self.uniform_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below_usize(i + 1);
            items.swap(i, j);
        }
    }

    /// Index drawn from `probs` by inverse CDF. The last index absorbs any
    /// rounding slack.
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let u = self.uniform_f64();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.len() - 1
    }

    /// `k` distinct values from `[0, n)` in draw order (partial Fisher-Yates).
    pub fn sample_distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below_usize(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}
