//! Running mean / variance with normal-approximation confidence intervals.

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Welford accumulator. Results depend on push order, so callers feed values
/// in path-index order.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningStats {
    n: u64,
    mean: f64,
    m2: f64,
    max: f64,
}

impl RunningStats {
    pub fn new() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            ..Self::default()
        }
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
        if x > self.max || self.n == 1 {
            self.max = x;
        }
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    /// Unbiased sample variance; zero below two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        }
    }

    /// 95% half-width of the mean.
    pub fn ci_halfwidth(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            Z95 * (self.variance() / self.n as f64).sqrt()
        }
    }
}
