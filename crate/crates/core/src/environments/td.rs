//! TD(0) policy evaluation on Garnet MDPs written as a federated linear system.
//!
//! For a state `s` drawn from the stationary law and a successor `s'` from
//! the uniform-policy kernel, the observation is
//! `A(Z) = phi(s) (phi(s) - lambda phi(s'))^T` and `b(Z) = r(s) phi(s)`.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::garnet::{generate_garnet, perturb_mdp, stationary_distribution, GarnetSpec, Mdp};
use crate::engine::observation::{FiniteModel, FiniteOutcome};
use crate::engine::stream::{derive_seed, NoiseStreamKey};
use crate::error::{Error, Result};
use crate::linalg::{min_real_eigenvalue, Mat, Vector};
use crate::model::{build_federated_system, AgentSystem, FederatedSystem, HURWITZ_TOLERANCE};

const LABEL_FEATURES: u64 = 0x6665_6174;
const LABEL_AGENT: u64 = 0x6167_656e;
const LABEL_REGEN: u64 = 0x7265_6765;

pub const FEATURE_RETRIES: usize = 20;
pub const GARNET_RETRIES: usize = 20;

/// `n x d` matrix of i.i.d. standard normal rows scaled to unit length.
pub fn random_features(n: usize, d: usize, seed: u64) -> Mat {
    let mut m = Mat::zeros(n, d);
    for s in 0..n {
        let mut stream = NoiseStreamKey::env(seed, LABEL_FEATURES, s).stream();
        let row: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut stream)).collect();
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (j, x) in row.into_iter().enumerate() {
            m[(s, j)] = x / norm;
        }
    }
    m
}

/// One agent's TD(0) linear system and its finite observation space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdLsaModel {
    #[serde(with = "crate::linalg::nested")]
    pub features: Mat,
    /// Actions of the uniform behavior policy.
    pub n_actions: usize,
    #[serde(with = "crate::linalg::flat")]
    pub stationary: Vector,
    pub discount: f64,
    /// Uniform-policy kernel.
    #[serde(with = "crate::linalg::nested")]
    pub kernel: Mat,
    #[serde(with = "crate::linalg::flat")]
    pub reward: Vector,
    pub system: AgentSystem,
}

impl TdLsaModel {
    fn phi(&self, s: usize) -> Vector {
        self.features.row(s).transpose()
    }

    /// Every `(s, s')` pair with positive probability `pi(s) P(s, s')`.
    pub fn outcomes(&self) -> Vec<(f64, FiniteOutcome)> {
        let n = self.stationary.len();
        let mut out = Vec::new();
        for s in 0..n {
            let ps = self.stationary[s];
            if ps <= 0.0 {
                continue;
            }
            let phi_s = self.phi(s);
            for s2 in 0..n {
                let q = self.kernel[(s, s2)];
                if q <= 0.0 {
                    continue;
                }
                let v = &phi_s - self.phi(s2) * self.discount;
                out.push((ps * q, FiniteOutcome::rank_one(phi_s.clone(), v, &phi_s * self.reward[s])));
            }
        }
        out
    }
}

/// Builds the TD system for one MDP with fixed features.
///
/// `Abar = Phi^T D (I - lambda P) Phi` and `bbar = Phi^T D r` with `D = diag(pi)`.
pub fn td_lsa_model(mdp: &Mdp, features: &Mat, discount: f64) -> Result<TdLsaModel> {
    let n = mdp.n_states();
    if features.nrows() != n {
        return Err(Error::DimensionMismatch {
            what: "feature rows",
            expected: n,
            found: features.nrows(),
        });
    }
    let kernel = mdp.policy_kernel();
    let pi = stationary_distribution(&kernel)?;
    let d = Mat::from_diagonal(&pi);
    let eye = Mat::identity(n, n);
    let a_bar = features.transpose() * &d * (eye - &kernel * discount) * features;
    let b_bar = features.transpose() * &d * &mdp.reward;
    Ok(TdLsaModel {
        features: features.clone(),
        n_actions: mdp.n_actions(),
        stationary: pi,
        discount,
        kernel,
        reward: mdp.reward.clone(),
        system: AgentSystem::new(a_bar, b_bar),
    })
}

/// A Garnet-based federation: shared base MDP and features, one perturbed
/// MDP per agent.
#[derive(Debug, Clone)]
pub struct GarnetFederation {
    pub spec: GarnetSpec,
    /// Seed that produced the base MDP after any regenerations.
    pub garnet_seed: u64,
    /// Seed that produced the features after any resampling.
    pub feature_seed: u64,
    pub base: Mdp,
    pub agents: Vec<TdLsaModel>,
    pub system: FederatedSystem,
    pub model: FiniteModel,
}

/// Generates the base Garnet, perturbs it per agent and maps each agent to
/// its TD system.
///
/// A base MDP whose chains fail to converge is regenerated with a derived
/// seed; features are resampled when some agent matrix is not stable.
pub fn garnet_federation(spec: &GarnetSpec) -> Result<GarnetFederation> {
    spec.validate()?;
    let mut last_err = None;
    for g in 0..GARNET_RETRIES {
        let garnet_seed = if g == 0 { spec.seed } else { derive_seed(spec.seed, LABEL_REGEN, g as u64) };
        let base = generate_garnet(&GarnetSpec { seed: garnet_seed, ..*spec })?;
        let mdps = (0..spec.n_agents)
            .map(|c| perturb_mdp(&base, spec.perturb_magnitude, derive_seed(garnet_seed, LABEL_AGENT, c as u64)))
            .collect::<Result<Vec<_>>>()?;
        match federation_for(spec, garnet_seed, base, &mdps) {
            Err(e @ Error::NoConvergence { .. }) => {
                log::warn!("garnet seed {garnet_seed}: {e}; regenerating");
                last_err = Some(e);
            }
            other => return other,
        }
    }
    Err(last_err.expect("at least one attempt"))
}

fn federation_for(spec: &GarnetSpec, garnet_seed: u64, base: Mdp, mdps: &[Mdp]) -> Result<GarnetFederation> {
    for k in 0..FEATURE_RETRIES {
        let feature_seed = derive_seed(garnet_seed, LABEL_FEATURES, k as u64);
        let features = random_features(spec.n_states, spec.dim, feature_seed);
        let agents = mdps
            .iter()
            .map(|m| td_lsa_model(m, &features, spec.discount))
            .collect::<Result<Vec<_>>>()?;
        let stable = agents
            .iter()
            .all(|a| min_real_eigenvalue(&a.system.a_bar) >= HURWITZ_TOLERANCE);
        if !stable {
            log::debug!("features {feature_seed} give an unstable agent matrix; resampling");
            continue;
        }
        let system = match build_federated_system(agents.iter().map(|a| a.system.clone()).collect()) {
            Ok(s) => s,
            Err(Error::SingularSystem { .. }) | Err(Error::NotHurwitz { .. }) => continue,
            Err(e) => return Err(e),
        };
        let model = FiniteModel::new(agents.iter().map(TdLsaModel::outcomes).collect(), system.theta_star_agents())?;
        return Ok(GarnetFederation {
            spec: *spec,
            garnet_seed,
            feature_seed,
            base,
            agents,
            system,
            model,
        });
    }
    Err(Error::HurwitzFailure { retries: FEATURE_RETRIES })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::observation::ObservationModel;
    use crate::engine::run::run_fedlsa;
    use crate::linalg::min_symmetric_eigenvalue;
    use crate::model::{heterogeneity, noise_moments, MomentMode, NoiseMoments};
    use crate::schedule::Schedule;

    #[test]
    fn features_have_unit_rows() {
        let f = random_features(30, 5, 1);
        for r in f.row_iter() {
            assert!((r.norm() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn enumeration_reproduces_means() {
        let fed = garnet_federation(&GarnetSpec::default()).unwrap();
        for (c, agent) in fed.agents.iter().enumerate() {
            let (a, b) = fed.model.mean(c);
            assert!((a - &agent.system.a_bar).amax() <= 1e-12);
            assert!((b - &agent.system.b_bar).amax() <= 1e-12);
            let p = &agent.kernel;
            let pi = &agent.stationary;
            assert!((pi.transpose() * p - pi.transpose()).amax() <= 1e-10);
            assert!(fed.model.outcome_count(c).unwrap() <= 30 * 4);
        }
    }

    #[test]
    fn discount_free_matrix_is_symmetric() {
        let mdp = generate_garnet(&GarnetSpec::default()).unwrap();
        let f = random_features(30, 5, 2);
        let m = td_lsa_model(&mdp, &f, 0.0).unwrap();
        assert!(crate::linalg::max_asymmetry(&m.system.a_bar) < 1e-15);
        assert!(min_symmetric_eigenvalue(&m.system.a_bar) >= -1e-15);
    }

    #[test]
    fn default_federation_contracts_without_noise() {
        let fed = garnet_federation(&GarnetSpec::default()).unwrap();
        let det = FiniteModel::deterministic(&fed.system);
        let sched = Schedule::constant(0.1, 1).unwrap();
        let tr = run_fedlsa(&fed.system, &det, sched, 10_000, &Vector::zeros(5), 0).unwrap();
        assert!((tr.last() - fed.system.theta_star()).norm() < 1e-6);
    }

    #[test]
    fn heterogeneity_grows_with_perturbation() {
        let mut last = -1.0;
        for m in [0.0, 0.05, 0.1, 0.2] {
            let spec = GarnetSpec {
                perturb_magnitude: m,
                seed: 2,
                ..Default::default()
            };
            let fed = garnet_federation(&spec).unwrap();
            let rep = heterogeneity(&fed.system, &NoiseMoments::zero(5, 5)).unwrap();
            assert!(rep.zeta2 > last, "m={m}: {} <= {last}", rep.zeta2);
            last = rep.zeta2;
        }
    }

    #[test]
    fn exact_moments_are_psd() {
        let fed = garnet_federation(&GarnetSpec::default()).unwrap();
        let mom = noise_moments(&fed.system, &fed.model, MomentMode::Exact).unwrap();
        for m in mom.sigma_eps.iter().chain(&mom.sigma_a).chain([&mom.sigma_star_avg]) {
            assert!(crate::linalg::max_asymmetry(m) < 1e-10);
            assert!(m.symmetric_eigenvalues().min() >= -1e-10 * m.trace().max(1.0));
        }
    }
}
