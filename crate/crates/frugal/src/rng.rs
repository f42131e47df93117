//! Named, reproducible random streams.
//!
//! Every stochastic procedure draws from a stream identified by `(seed, label)`.
//! The stream key is a SHA-256 digest of both, feeding a ChaCha8 counter-based
//! generator, so adding a new consumer with a fresh label never perturbs the
//! draws seen by existing consumers. All distribution sampling (uniform ranges,
//! normals, Poisson) is implemented here on top of the raw 64-bit output so the
//! sequence of draws is fixed by this crate alone.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use sha2::{Digest, Sha256};

/// A reproducible random stream tied to a `(seed, label)` pair.
pub struct StreamRng {
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

/// Create the stream for `(seed, label)`.
pub fn seeded_rng(seed: u64, label: &str) -> StreamRng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update([0x1f]);
    hasher.update(label.as_bytes());
    let key: [u8; 32] = hasher.finalize().into();
    StreamRng {
        inner: ChaCha8Rng::from_seed(key),
        spare_normal: None,
    }
}

impl StreamRng {
    /// Child stream derived from this stream's identity plus a sub-label.
    /// Cheaper to reason about than manual label concatenation at call sites.
    pub fn child(&self, sub: &str) -> StreamRng {
        let mut hasher = Sha256::new();
        hasher.update(self.inner.get_seed());
        hasher.update([0x1f]);
        hasher.update(sub.as_bytes());
        let key: [u8; 32] = hasher.finalize().into();
        StreamRng {
            inner: ChaCha8Rng::from_seed(key),
            spare_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1) with 53-bit resolution.
    pub fn f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n). Rejection sampling, exact.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    /// Uniform integer in [lo, hi] inclusive.
    pub fn range_inclusive(&mut self, lo: u64, hi: u64) -> u64 {
        assert!(lo <= hi);
        lo + self.below(hi - lo + 1)
    }

    pub fn usize_below(&mut self, n: usize) -> usize {
        self.below(n as u64) as usize
    }

    /// Bernoulli draw.
    pub fn chance(&mut self, p: f64) -> bool {
        self.f64() < p
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        loop {
            let u1 = self.f64();
            if u1 <= f64::MIN_POSITIVE {
                continue;
            }
            let u2 = self.f64();
            let r = (-2.0 * u1.ln()).sqrt();
            let theta = 2.0 * std::f64::consts::PI * u2;
            self.spare_normal = Some(r * theta.sin());
            return r * theta.cos();
        }
    }

    /// Poisson(lambda) by Knuth's product method. Adequate for small lambda.
    pub fn poisson(&mut self, lambda: f64) -> u64 {
        assert!(lambda > 0.0);
        let limit = (-lambda).exp();
        let mut k = 0u64;
        let mut p = 1.0;
        loop {
            p *= self.f64();
            if p <= limit {
                return k;
            }
            k += 1;
        }
    }

    /// Poisson(lambda) conditioned on being >= 1; zero draws are rejected
    /// and resampled.
    pub fn poisson_at_least_one(&mut self, lambda: f64) -> u64 {
        loop {
            let k = self.poisson(lambda);
            if k >= 1 {
                return k;
            }
        }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, slice: &mut [T]) {
        for i in (1..slice.len()).rev() {
            let j = self.usize_below(i + 1);
            slice.swap(i, j);
        }
    }

    /// Uniform permutation of 0..n that is not the identity (requires n >= 2).
    pub fn non_identity_permutation(&mut self, n: usize) -> Vec<usize> {
        assert!(n >= 2);
        let mut perm: Vec<usize> = (0..n).collect();
        loop {
            self.shuffle(&mut perm);
            if perm.iter().enumerate().any(|(i, &p)| i != p) {
                return perm;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draws(seed: u64, label: &str, n: usize) -> Vec<u64> {
        let mut rng = seeded_rng(seed, label);
        (0..n).map(|_| rng.next_u64()).collect()
    }

    #[test]
    fn same_stream_is_identical() {
        assert_eq!(draws(42, "mask", 100), draws(42, "mask", 100));
    }

    #[test]
    fn different_labels_differ() {
        assert_ne!(draws(42, "mask", 100), draws(42, "shuffle", 100));
    }

    #[test]
    fn different_seeds_differ() {
        assert_ne!(draws(42, "mask", 100), draws(43, "mask", 100));
    }

    #[test]
    fn f64_in_unit_interval() {
        let mut rng = seeded_rng(7, "unit");
        for _ in 0..10_000 {
            let x = rng.f64();
            assert!((0.0..1.0).contains(&x));
        }
    }

    #[test]
    fn below_is_uniform_enough() {
        let mut rng = seeded_rng(7, "below");
        let mut counts = [0usize; 5];
        for _ in 0..50_000 {
            counts[rng.usize_below(5)] += 1;
        }
        for &c in &counts {
            assert!((9_000..11_000).contains(&c), "counts {counts:?}");
        }
    }

    #[test]
    fn poisson_conditional_mean_matches_analytic() {
        // E[X | X >= 1] for Poisson(3) is 3 / (1 - e^-3).
        let mut rng = seeded_rng(11, "poisson");
        let n = 200_000;
        let sum: u64 = (0..n).map(|_| rng.poisson_at_least_one(3.0)).sum();
        let mean = sum as f64 / n as f64;
        let expected = 3.0 / (1.0 - (-3.0f64).exp());
        assert!((mean - expected).abs() < 0.02, "mean {mean} vs {expected}");
    }

    #[test]
    fn normal_moments() {
        let mut rng = seeded_rng(5, "normal");
        let n = 200_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let z = rng.normal();
            s += z;
            s2 += z * z;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn non_identity_permutation_never_identity() {
        let mut rng = seeded_rng(3, "perm");
        for _ in 0..200 {
            let p = rng.non_identity_permutation(2);
            assert_eq!(p, vec![1, 0]);
        }
        for _ in 0..200 {
            let p = rng.non_identity_permutation(5);
            assert!(p.iter().enumerate().any(|(i, &v)| i != v));
        }
    }
}
