//! Multiplier-bootstrap weights.
//!
//! The default distribution standardizes a `Beta(1/2, 2)` draw to mean 1 and
//! variance 1: `w = 1 + (x - 0.2) / sqrt(1 / 21.875)`, which lands in
//! `[0.0646, 4.742]`. A two-point alternative `{0, 2}` with equal mass has the
//! same first two moments.

use serde::{Deserialize, Serialize};

use super::stream::{Channel, NoiseStreamKey, WeightKeyPrefix};

/// Mean of `Beta(1/2, 2)`.
pub const BETA_MEAN: f64 = 0.2;
/// Standard deviation of `Beta(1/2, 2)`, `sqrt(1 / 21.875)`.
pub const BETA_SD: f64 = 0.213_808_993_529_939_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightDistribution {
    #[default]
    NormalizedBeta,
    TwoPoint,
    /// `w = 1`; the bootstrap recursion collapses onto the base run.
    Unit,
}

impl WeightDistribution {
    pub fn id(self) -> &'static str {
        match self {
            WeightDistribution::NormalizedBeta => "normalized-beta(0.5,2)",
            WeightDistribution::TwoPoint => "two-point{0,2}",
            WeightDistribution::Unit => "unit",
        }
    }

    /// Support `[w_min, w_max]` of the weights.
    pub fn support(self) -> (f64, f64) {
        match self {
            WeightDistribution::NormalizedBeta => (normalize_beta(0.0), normalize_beta(1.0)),
            WeightDistribution::TwoPoint => (0.0, 2.0),
            WeightDistribution::Unit => (1.0, 1.0),
        }
    }

    #[inline]
    pub fn from_uniform(self, u: f64) -> f64 {
        match self {
            WeightDistribution::NormalizedBeta => normalize_beta(beta_half_two_quantile(u)),
            WeightDistribution::TwoPoint => {
                if u < 0.5 {
                    0.0
                } else {
                    2.0
                }
            }
            WeightDistribution::Unit => 1.0,
        }
    }

    /// Weight of replicate `b` given the shared key prefix.
    #[inline]
    pub fn sample_prefixed(self, prefix: WeightKeyPrefix, b: usize) -> f64 {
        if self == WeightDistribution::Unit {
            return 1.0;
        }
        self.from_uniform(prefix.uniform(b))
    }

    #[inline]
    pub fn sample(self, key: &NoiseStreamKey) -> f64 {
        if self == WeightDistribution::Unit {
            return 1.0;
        }
        self.from_uniform(key.uniform())
    }
}

/// Weight for a bootstrap-weight key under the default distribution.
pub fn sample_weight(key: &NoiseStreamKey) -> f64 {
    debug_assert_eq!(key.channel, Channel::BootstrapWeight);
    WeightDistribution::NormalizedBeta.sample(key)
}

#[inline]
pub fn normalize_beta(x: f64) -> f64 {
    1.0 + (x - BETA_MEAN) / BETA_SD
}

/// Inverse CDF of `Beta(1/2, 2)`.
///
/// With `y = sqrt(x)` the CDF is `(3y - y^3) / 2`. Writing `z = 1 - y` the
/// equation becomes `z^2 (3 - z) = 2 (1 - u)`; `z / sqrt(1 - u)` is smooth on
/// `[0, 1]`, so a degree-6 fit followed by one Halley step gives `z` to a few
/// ulps without trigonometric calls.
#[inline]
pub fn beta_half_two_quantile(u: f64) -> f64 {
    if !(u > 0.0) {
        return 0.0;
    }
    if u >= 1.0 {
        return 1.0;
    }
    const Q: [f64; 7] = [
        0.816_505_835_293_660_9,
        0.110_621_058_519_444_93,
        0.043_941_895_953_713_575,
        -0.014_412_291_629_835_12,
        0.081_756_248_868_619_39,
        -0.080_627_705_001_835_44,
        0.042_199_146_024_659_31,
    ];
    let c = 2.0 * (1.0 - u);
    let s = (1.0 - u).sqrt();
    let q = Q[0] + s * (Q[1] + s * (Q[2] + s * (Q[3] + s * (Q[4] + s * (Q[5] + s * Q[6])))));
    let z = s * q;
    let h = z * z * (3.0 - z) - c;
    let h1 = 3.0 * z * (2.0 - z);
    let h2 = 6.0 - 6.0 * z;
    let z = z - 2.0 * h * h1 / (2.0 * h1 * h1 - h * h2);
    let y = (1.0 - z).clamp(0.0, 1.0);
    y * y
}

#[cfg(test)]
mod tests {
    use super::*;

    fn beta_cdf(x: f64) -> f64 {
        1.5 * x.sqrt() - 0.5 * x.powf(1.5)
    }

    #[test]
    fn moments_constants() {
        // mean a/(a+b), variance ab/((a+b)^2 (a+b+1)) with a = 1/2, b = 2
        let (a, b) = (0.5, 2.0);
        assert!((BETA_MEAN - a / (a + b)).abs() < 1e-15);
        let var = a * b / ((a + b) * (a + b) * (a + b + 1.0));
        assert!((BETA_SD - var.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for i in 1..1000 {
            let u = i as f64 / 1000.0;
            let x = beta_half_two_quantile(u);
            assert!((beta_cdf(x) - u).abs() < 1e-12, "u = {u}");
        }
        for i in 0..=10_000 {
            let u = i as f64 / 10_000.0;
            let trig = 2.0 * ((-u).acos() / 3.0 + 4.0 * std::f64::consts::PI / 3.0).cos();
            let trig = trig.clamp(0.0, 1.0).powi(2);
            assert!((beta_half_two_quantile(u) - trig).abs() < 1e-14, "u = {u}");
        }
        assert_eq!(beta_half_two_quantile(0.0), 0.0);
        assert!((beta_half_two_quantile(1.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalization_examples() {
        assert!((normalize_beta(0.2) - 1.0).abs() < 1e-15);
        assert!((normalize_beta(0.0) - 0.064_585_653_306_514_67).abs() < 1e-12);
    }

    #[test]
    fn weight_moments_over_a_million_draws() {
        for dist in [WeightDistribution::NormalizedBeta, WeightDistribution::TwoPoint] {
            let n = 1_000_000;
            let (mut s, mut s2) = (0.0, 0.0);
            for i in 0..n {
                let w = dist.sample(&NoiseStreamKey::weight(3, i, 1, 0, 0));
                s += w;
                s2 += w * w;
            }
            let mean = s / n as f64;
            let var = s2 / n as f64 - mean * mean;
            assert!((mean - 1.0).abs() < 0.005, "{dist:?} mean {mean}");
            assert!((var - 1.0).abs() < 0.005, "{dist:?} var {var}");
        }
    }

    #[test]
    fn unit_weights() {
        let k = NoiseStreamKey::weight(1, 1, 1, 1, 1);
        assert_eq!(WeightDistribution::Unit.sample(&k), 1.0);
    }
}
