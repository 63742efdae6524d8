//! The scalar process used to study the limiting variance of the last iterate.
//!
//! Step sizes are `eta_1 = 0` and `eta_l = (1 + l)^-gamma` for `l >= 2`, and
//! the iterate follows `theta_t = (1 - eta_t) theta_{t-1} - eta_t xi_t` with
//! unit-variance noise, so that `theta_t = -sum_j eta_j prod_{l>j} (1 - eta_l) xi_j`.
//! The variance of `eta_t^{-1/2} theta_t` is
//! `v_t = eta_t^-1 sum_j eta_j^2 prod_{l>j} (1 - eta_l)^2`, which tends to 1/2.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::engine::stream::NoiseStreamKey;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyProcess1d {
    pub gamma: f64,
}

impl ToyProcess1d {
    pub fn new(gamma: f64) -> Result<Self> {
        if gamma > 0.0 && gamma < 1.0 {
            Ok(ToyProcess1d { gamma })
        } else {
            Err(Error::OutOfRange(gamma))
        }
    }

    pub fn step_size(&self, l: usize) -> f64 {
        if l <= 1 {
            0.0
        } else {
            (1.0 + l as f64).powf(-self.gamma)
        }
    }

    /// `v_t` at each requested round (ascending, each `>= 2`) in one pass.
    pub fn variance_series(&self, rounds: &[usize]) -> Result<Vec<f64>> {
        if let Some(&t) = rounds.iter().find(|&&t| t < 2) {
            return Err(Error::InvalidRound(t));
        }
        if rounds.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidArgument("rounds must be ascending".into()));
        }
        let last = rounds.last().copied().unwrap_or(0);
        let mut out = Vec::with_capacity(rounds.len());
        let mut wanted = rounds.iter().peekable();
        let mut s = 0.0;
        for t in 1..=last {
            let eta = self.step_size(t);
            s = (1.0 - eta).powi(2) * s + eta * eta;
            while wanted.peek() == Some(&&t) {
                wanted.next();
                out.push(s / eta);
            }
        }
        Ok(out)
    }

    /// One path of the process up to round `t`, with standard normal noise.
    pub fn simulate(&self, t: usize, seed: u64) -> f64 {
        let mut theta = 0.0;
        for l in 1..=t {
            let eta = self.step_size(l);
            let xi: f64 = StandardNormal.sample(&mut NoiseStreamKey::data(seed, l, 0, 0).stream());
            theta = (1.0 - eta) * theta - eta * xi;
        }
        theta
    }
}

/// `v_t = Var[eta_t^{-1/2} theta_t]` by the `O(t)` recursion
/// `S_t = (1 - eta_t)^2 S_{t-1} + eta_t^2`, `v_t = S_t / eta_t`.
pub fn toy_variance(gamma: f64, t: usize) -> Result<f64> {
    Ok(ToyProcess1d::new(gamma)?.variance_series(&[t])?[0])
}
