//! Binomial estimates with normal-approximation confidence intervals.

use serde::Serialize;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;
/// Two-sided 99% normal quantile.
pub const Z99: f64 = 2.575_829_303_548_901;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub samples: u64,
    pub successes: u64,
    pub mean: f64,
    pub std_err: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl Estimate {
    /// Proportion `successes / samples` with a 95% interval.
    pub fn proportion(successes: u64, samples: u64) -> Self {
        Self::proportion_z(successes, samples, Z95)
    }

    pub fn proportion_z(successes: u64, samples: u64, z: f64) -> Self {
        let n = samples.max(1) as f64;
        let mean = successes as f64 / n;
        let std_err = (mean * (1.0 - mean) / n).sqrt();
        Self {
            samples,
            successes,
            mean,
            std_err,
            ci_lo: mean - z * std_err,
            ci_hi: mean + z * std_err,
        }
    }

    pub fn contains(&self, value: f64) -> bool {
        self.ci_lo <= value && value <= self.ci_hi
    }

    /// The two intervals do not overlap.
    pub fn disjoint(&self, other: &Estimate) -> bool {
        self.ci_hi < other.ci_lo || other.ci_hi < self.ci_lo
    }
}

/// Mean, min and max of a sample; `None` when empty.
pub fn summarize(values: &[f64]) -> Option<(f64, f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Some((mean, min, max))
}
