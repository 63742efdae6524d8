//! Synthetic federated systems with controlled heterogeneity and bounded
//! additive noise.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::engine::observation::UniformNoiseModel;
use crate::engine::stream::{derive_seed, NoiseStreamKey};
use crate::error::{Error, Result};
use crate::linalg::{min_real_eigenvalue, Mat, Vector};
use crate::model::{build_federated_system, AgentSystem, FederatedSystem, HURWITZ_TOLERANCE};

const LABEL_SYNTH: u64 = 0x7379_6e74;
pub const SYNTHETIC_RETRIES: usize = 20;

fn default_mu() -> f64 {
    1.0
}
fn default_skew() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub dim: usize,
    pub n_agents: usize,
    #[serde(default)]
    pub het_a: f64,
    #[serde(default)]
    pub het_b: f64,
    pub noise_scale: f64,
    #[serde(default)]
    pub seed: u64,
    /// Diagonal level of the mean matrix.
    #[serde(default = "default_mu")]
    pub mu: f64,
    /// Scale of the skew-symmetric part of the mean matrix.
    #[serde(default = "default_skew")]
    pub skew: f64,
}

impl SyntheticSpec {
    pub fn new(dim: usize, n_agents: usize, het_a: f64, het_b: f64, noise_scale: f64, seed: u64) -> Self {
        SyntheticSpec {
            dim,
            n_agents,
            het_a,
            het_b,
            noise_scale,
            seed,
            mu: default_mu(),
            skew: default_skew(),
        }
    }
}

fn gaussian_matrix(rows: usize, cols: usize, key: NoiseStreamKey) -> Mat {
    let mut stream = key.stream();
    Mat::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut stream))
}

/// `Abar = mu I + S` with `S` skew-symmetric, agents `Abar + het_a M_c` and
/// `bbar + het_b v_c` with the perturbations centered to mean zero across
/// agents, and i.i.d. uniform observation noise of the given scale.
///
/// Perturbations that leave some agent matrix unstable are redrawn.
pub fn synthetic_system(spec: &SyntheticSpec) -> Result<(FederatedSystem, UniformNoiseModel)> {
    let (d, n) = (spec.dim, spec.n_agents);
    if d == 0 || n == 0 {
        return Err(Error::InvalidArgument("synthetic system needs d >= 1 and N >= 1".into()));
    }
    if !(spec.mu > 0.0) || spec.het_a < 0.0 || spec.het_b < 0.0 || spec.skew < 0.0 {
        return Err(Error::InvalidArgument("mu must be positive and scales nonnegative".into()));
    }
    for attempt in 0..SYNTHETIC_RETRIES {
        let seed = if attempt == 0 { spec.seed } else { derive_seed(spec.seed, LABEL_SYNTH, attempt as u64) };
        let g = gaussian_matrix(d, d, NoiseStreamKey::env(seed, LABEL_SYNTH, 0));
        let a_avg = Mat::identity(d, d) * spec.mu + (&g - g.transpose()) * (0.5 * spec.skew);
        let b_avg = gaussian_matrix(d, 1, NoiseStreamKey::env(seed, LABEL_SYNTH, 1)).column(0).into_owned();
        let ms: Vec<Mat> = (0..n)
            .map(|c| gaussian_matrix(d, d, NoiseStreamKey::env(seed, LABEL_SYNTH, 2 + 2 * c)))
            .collect();
        let vs: Vec<Vector> = (0..n)
            .map(|c| {
                gaussian_matrix(d, 1, NoiseStreamKey::env(seed, LABEL_SYNTH, 3 + 2 * c))
                    .column(0)
                    .into_owned()
            })
            .collect();
        let m_mean = ms.iter().fold(Mat::zeros(d, d), |a, m| a + m) / n as f64;
        let v_mean = vs.iter().fold(Vector::zeros(d), |a, v| a + v) / n as f64;
        let agents: Vec<AgentSystem> = ms
            .iter()
            .zip(&vs)
            .map(|(m, v)| {
                AgentSystem::new(
                    &a_avg + (m - &m_mean) * spec.het_a,
                    &b_avg + (v - &v_mean) * spec.het_b,
                )
            })
            .collect();
        if agents.iter().any(|a| min_real_eigenvalue(&a.a_bar) < HURWITZ_TOLERANCE) {
            continue;
        }
        let sys = match build_federated_system(agents) {
            Ok(s) => s,
            Err(Error::NotHurwitz { .. }) | Err(Error::SingularSystem { .. }) => continue,
            Err(e) => return Err(e),
        };
        let model = UniformNoiseModel::new(&sys, spec.noise_scale)?;
        return Ok((sys, model));
    }
    Err(Error::StabilityFailure {
        retries: SYNTHETIC_RETRIES,
    })
}
