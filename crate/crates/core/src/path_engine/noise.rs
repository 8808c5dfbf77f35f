//! Reproducible driving noise.
//!
//! Each path owns two ChaCha8 substreams, one for Brownian increments and
//! one for Poisson counts. The key is `(master_seed, tag)` and the ChaCha
//! stream id is the path index, so the increments of a path are a pure
//! function of `(master_seed, path_index, k)` and paths can be generated in
//! any order or in parallel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const TAG_BROWNIAN: u64 = 0x4252_4f57_4e49_414e;
const TAG_POISSON: u64 = 0x504f_4953_534f_4e00;

/// Largest per-step Poisson mean accepted by the inversion sampler.
pub const MAX_POISSON_MEAN: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NoiseStream {
    pub master_seed: u64,
    pub path_index: u64,
}

/// Per-step increments `dB_k = B(t_{k+1}) - B(t_k)` and `dN_k`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Increments {
    pub brownian: Vec<f64>,
    pub jumps: Vec<u32>,
}

impl NoiseStream {
    pub fn new(master_seed: u64, path_index: u64) -> Self {
        Self {
            master_seed,
            path_index,
        }
    }

    fn substream(&self, tag: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.master_seed.to_le_bytes());
        key[8..16].copy_from_slice(&tag.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.path_index);
        rng
    }

    /// The first `n` Brownian increments with variance `delta`.
    pub fn brownian(&self, delta: f64, n: usize) -> Vec<f64> {
        let sd = delta.sqrt();
        let mut rng = self.substream(TAG_BROWNIAN);
        (0..n)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                sd * z
            })
            .collect()
    }

    /// The first `n` Poisson counts with mean `lambda * delta`.
    pub fn poisson(&self, mean: f64, n: usize) -> Result<Vec<u32>> {
        if !(0.0..=MAX_POISSON_MEAN).contains(&mean) {
            return Err(Error::Precondition(format!(
                "per-step Poisson mean must lie in [0, {MAX_POISSON_MEAN}], got {mean}"
            )));
        }
        if mean == 0.0 {
            return Ok(vec![0; n]);
        }
        let mut rng = self.substream(TAG_POISSON);
        let p0 = (-mean).exp();
        Ok((0..n)
            .map(|_| poisson_inversion(rng.random::<f64>(), mean, p0))
            .collect())
    }

    pub fn increments(&self, delta: f64, lambda: f64, n: usize) -> Result<Increments> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::StepSize {
                delta,
                reason: "must be positive and finite".into(),
            });
        }
        Ok(Increments {
            brownian: self.brownian(delta, n),
            jumps: self.poisson(lambda * delta, n)?,
        })
    }
}

/// Smallest `k` with `P(N <= k) > u` for `N ~ Poisson(mean)`; `p0 = e^-mean`.
pub fn poisson_inversion(u: f64, mean: f64, p0: f64) -> u32 {
    let mut k = 0u32;
    let mut p = p0;
    let mut cdf = p0;
    // the tail beyond a few hundred is below f64 resolution for mean <= 10
    while u >= cdf && k < 1000 {
        k += 1;
        p *= mean / k as f64;
        cdf += p;
        if p == 0.0 {
            break;
        }
    }
    k
}

impl Increments {
    pub fn len(&self) -> usize {
        self.brownian.len()
    }

    pub fn is_empty(&self) -> bool {
        self.brownian.is_empty()
    }

    /// Sums each run of `factor` consecutive increments, giving the increments
    /// of the same Brownian motion and Poisson process on a grid `factor`
    /// times coarser.
    pub fn aggregate(&self, factor: usize) -> Result<Increments> {
        if factor == 0 || !self.len().is_multiple_of(factor) {
            return Err(Error::GridIncompatible(format!(
                "{} increments cannot be grouped in blocks of {factor}",
                self.len()
            )));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        Ok(Increments {
            brownian: self
                .brownian
                .chunks_exact(factor)
                .map(|c| c.iter().sum())
                .collect(),
            jumps: self
                .jumps
                .chunks_exact(factor)
                .map(|c| c.iter().sum())
                .collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_path() {
        let a = NoiseStream::new(7, 3).increments(0.01, 2.0, 500).unwrap();
        let b = NoiseStream::new(7, 3).increments(0.01, 2.0, 500).unwrap();
        assert_eq!(a, b);
        let c = NoiseStream::new(7, 4).increments(0.01, 2.0, 500).unwrap();
        assert_ne!(a.brownian, c.brownian);
        let d = NoiseStream::new(8, 3).increments(0.01, 2.0, 500).unwrap();
        assert_ne!(a.brownian, d.brownian);
    }

    #[test]
    fn prefix_stable() {
        // the k-th increment does not depend on how many are requested
        let s = NoiseStream::new(11, 0);
        let short = s.increments(0.1, 1.0, 10).unwrap();
        let long = s.increments(0.1, 1.0, 1000).unwrap();
        assert_eq!(short.brownian[..], long.brownian[..10]);
        assert_eq!(short.jumps[..], long.jumps[..10]);
    }

    #[test]
    fn poisson_inversion_small_cases() {
        let m: f64 = 0.5;
        let p0 = (-m).exp();
        assert_eq!(poisson_inversion(0.0, m, p0), 0);
        assert_eq!(poisson_inversion(p0 * 0.999, m, p0), 0);
        assert_eq!(poisson_inversion(p0 * 1.001, m, p0), 1);
        let cdf1 = p0 * (1.0 + m);
        assert_eq!(poisson_inversion(cdf1 * 1.0001, m, p0), 2);
    }

    #[test]
    fn zero_intensity_gives_no_jumps() {
        let inc = NoiseStream::new(1, 1).increments(0.5, 0.0, 64).unwrap();
        assert!(inc.jumps.iter().all(|&j| j == 0));
    }

    #[test]
    fn rejects_large_poisson_mean() {
        assert!(NoiseStream::new(1, 1).increments(1.0, 11.0, 4).is_err());
    }

    #[test]
    fn aggregation_sums() {
        let inc = NoiseStream::new(5, 9)
            .increments(1.0 / 64.0, 3.0, 64)
            .unwrap();
        let agg = inc.aggregate(8).unwrap();
        assert_eq!(agg.len(), 8);
        for (j, (&b, &n)) in agg.brownian.iter().zip(&agg.jumps).enumerate() {
            let fb: f64 = inc.brownian[8 * j..8 * j + 8].iter().sum();
            let fnn: u32 = inc.jumps[8 * j..8 * j + 8].iter().sum();
            assert_eq!(b, fb);
            assert_eq!(n, fnn);
        }
        let total_fine: f64 = inc.brownian.iter().sum();
        let total_coarse: f64 = agg.brownian.iter().sum();
        assert!((total_fine - total_coarse).abs() < 1e-14);
        assert_eq!(inc.jumps.iter().sum::<u32>(), agg.jumps.iter().sum::<u32>());
        assert_eq!(inc.aggregate(1).unwrap(), inc);
        assert!(inc.aggregate(3).is_err());
    }
}
