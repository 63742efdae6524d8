//! The federated linear system, its solutions, heterogeneity measures and
//! observation-noise moments.

use serde::{Deserialize, Serialize};

use crate::engine::observation::ObservationModel;
use crate::engine::stream::NoiseStreamKey;
use crate::error::{Error, Result};
use crate::linalg::{
    condition_number, mean_matrix, mean_vector, min_real_eigenvalue, min_symmetric_eigenvalue,
    solve, spectral_norm, Mat, Vector, SINGULAR_CONDITION,
};

/// Eigenvalue real parts below this reject a mean matrix as not stable.
pub const HURWITZ_TOLERANCE: f64 = 1e-9;

/// Mean system `(Abar^c, bbar^c)` of one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSystem {
    #[serde(with = "crate::linalg::nested")]
    pub a_bar: Mat,
    #[serde(with = "crate::linalg::flat")]
    pub b_bar: Vector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contraction_rate_hint: Option<f64>,
}

impl AgentSystem {
    pub fn new(a_bar: Mat, b_bar: Vector) -> Self {
        AgentSystem {
            a_bar,
            b_bar,
            contraction_rate_hint: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.b_bar.len()
    }

    /// The user hint if present, else `lambda_min((A + A^T) / 2)`.
    pub fn contraction_rate(&self) -> f64 {
        self.contraction_rate_hint
            .unwrap_or_else(|| min_symmetric_eigenvalue(&self.a_bar))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SystemFile {
    agents: Vec<AgentSystem>,
    #[serde(default, skip_deserializing, with = "crate::linalg::nested")]
    a_avg: Mat,
    #[serde(default, skip_deserializing, with = "crate::linalg::flat")]
    b_avg: Vector,
    #[serde(default, skip_deserializing, with = "crate::linalg::flat")]
    theta_star: Vector,
}

/// `N` agent systems with their average `(Abar, bbar)` and the solutions
/// `theta_star` of the averaged system and `theta_star_agents[c]` of each
/// agent system.
///
/// Serialized as `{"agents": [{"a_bar": [[..]], "b_bar": [..]}, ..], ..}`
/// with matrices as row-major nested arrays; derived fields are written for
/// reference and recomputed on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SystemFile", into = "SystemFile")]
pub struct FederatedSystem {
    agents: Vec<AgentSystem>,
    a_avg: Mat,
    b_avg: Vector,
    theta_star: Vector,
    theta_star_agents: Vec<Vector>,
}

impl TryFrom<SystemFile> for FederatedSystem {
    type Error = Error;

    fn try_from(f: SystemFile) -> Result<Self> {
        build_federated_system(f.agents)
    }
}

impl From<FederatedSystem> for SystemFile {
    fn from(s: FederatedSystem) -> Self {
        SystemFile {
            agents: s.agents,
            a_avg: s.a_avg,
            b_avg: s.b_avg,
            theta_star: s.theta_star,
        }
    }
}

/// Validates the agents and solves the averaged and per-agent systems.
pub fn build_federated_system(agents: Vec<AgentSystem>) -> Result<FederatedSystem> {
    let d = agents.first().ok_or(Error::EmptyInput)?.dim();
    for a in &agents {
        if a.a_bar.nrows() != d || a.a_bar.ncols() != d || a.b_bar.len() != d {
            return Err(Error::DimensionMismatch {
                what: "agent system",
                expected: d,
                found: a.b_bar.len().max(a.a_bar.nrows()).max(a.a_bar.ncols()),
            });
        }
    }
    for (c, a) in agents.iter().enumerate() {
        let min_real = min_real_eigenvalue(&a.a_bar);
        if !(min_real >= HURWITZ_TOLERANCE) {
            return Err(Error::NotHurwitz { agent: c, min_real });
        }
    }
    let a_avg = mean_matrix(agents.iter().map(|a| &a.a_bar)).expect("nonempty");
    let b_avg = mean_vector(agents.iter().map(|a| &a.b_bar)).expect("nonempty");
    let cond = condition_number(&a_avg);
    if cond > SINGULAR_CONDITION {
        return Err(Error::SingularSystem { cond });
    }
    let theta_star = solve(&a_avg, &b_avg)?;
    let theta_star_agents = agents
        .iter()
        .map(|a| solve(&a.a_bar, &a.b_bar))
        .collect::<Result<Vec<_>>>()?;
    Ok(FederatedSystem {
        agents,
        a_avg,
        b_avg,
        theta_star,
        theta_star_agents,
    })
}

impl FederatedSystem {
    pub fn agents(&self) -> &[AgentSystem] {
        &self.agents
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn dim(&self) -> usize {
        self.theta_star.len()
    }

    pub fn a_avg(&self) -> &Mat {
        &self.a_avg
    }

    pub fn b_avg(&self) -> &Vector {
        &self.b_avg
    }

    pub fn theta_star(&self) -> &Vector {
        &self.theta_star
    }

    pub fn theta_star_agents(&self) -> &[Vector] {
        &self.theta_star_agents
    }

    /// Smallest per-agent contraction rate; a heuristic stand-in for the
    /// constant `a` used in schedule guards and bound checks.
    pub fn contraction_hint(&self) -> f64 {
        self.agents
            .iter()
            .map(AgentSystem::contraction_rate)
            .fold(f64::INFINITY, f64::min)
    }

    /// `||Abar theta* - bbar||`.
    pub fn residual_norm(&self) -> f64 {
        (&self.a_avg * &self.theta_star - &self.b_avg).norm()
    }
}

/// Heterogeneity and noise-level summaries of a federated system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneityReport {
    /// `sqrt(N^-1 sum ||Abar^c (theta*^c - theta*)||^2)`
    pub zeta1: f64,
    /// `sqrt(N^-1 sum ||Abar^c - Abar||^2)`
    pub zeta2: f64,
    /// `N^-1 sum ||theta*^c - theta*||`
    pub zeta_star: f64,
    /// `sqrt(N^-1 sum ||theta*^c - theta*||^2)`
    pub zeta3: f64,
    /// `sqrt(N^-1 sum Tr(Sigma_A^c) ||theta*^c - theta*||^2)`
    pub zeta4: f64,
    /// `sqrt(N^-1 sum Tr(Sigma_eps^c))`
    pub sigma_eps_bar: f64,
    /// `sqrt(N^-1 sum ||Sigma_A^c|| ||theta*^c - theta*||^2)`
    pub sigma_het_bar: f64,
    /// `sqrt(N^-1 sum ||Sigma_A^c||^2)`
    pub sigma_a_bar: f64,
}

pub fn heterogeneity(sys: &FederatedSystem, moments: &NoiseMoments) -> Result<HeterogeneityReport> {
    let n = sys.n_agents();
    if moments.sigma_eps.len() != n || moments.sigma_a.len() != n {
        return Err(Error::DimensionMismatch {
            what: "noise moments",
            expected: n,
            found: moments.sigma_eps.len(),
        });
    }
    if moments.sigma_star_avg.nrows() != sys.dim() {
        return Err(Error::DimensionMismatch {
            what: "noise moments",
            expected: sys.dim(),
            found: moments.sigma_star_avg.nrows(),
        });
    }
    let nf = n as f64;
    let mut acc = [0.0f64; 8];
    for (c, agent) in sys.agents.iter().enumerate() {
        let gap = &sys.theta_star_agents[c] - &sys.theta_star;
        let gap_sq = gap.norm_squared();
        let sa_norm = spectral_norm(&moments.sigma_a[c]);
        acc[0] += (&agent.a_bar * &gap).norm_squared();
        acc[1] += spectral_norm(&(&agent.a_bar - &sys.a_avg)).powi(2);
        acc[2] += gap_sq.sqrt();
        acc[3] += gap_sq;
        acc[4] += moments.sigma_a[c].trace() * gap_sq;
        acc[5] += moments.sigma_eps[c].trace();
        acc[6] += sa_norm * gap_sq;
        acc[7] += sa_norm * sa_norm;
    }
    let root = |x: f64| (x / nf).max(0.0).sqrt();
    Ok(HeterogeneityReport {
        zeta1: root(acc[0]),
        zeta2: root(acc[1]),
        zeta_star: acc[2] / nf,
        zeta3: root(acc[3]),
        zeta4: root(acc[4]),
        sigma_eps_bar: root(acc[5]),
        sigma_het_bar: root(acc[6]),
        sigma_a_bar: root(acc[7]),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentMode {
    Exact,
    MonteCarlo { draws: usize, seed: u64 },
}

/// Second moments of the observation noise.
///
/// `sigma_eps[c] = E[eps^c eps^c^T]` with `eps^c(Z) = Atilde(Z) theta*^c - btilde(Z)`,
/// `sigma_a[c] = E[Atilde^T Atilde]`, and `sigma_star_avg` the agent average
/// of the noise covariance at the global solution `theta*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseMoments {
    #[serde(with = "crate::linalg::nested::list")]
    pub sigma_eps: Vec<Mat>,
    #[serde(with = "crate::linalg::nested::list")]
    pub sigma_a: Vec<Mat>,
    #[serde(with = "crate::linalg::nested::list")]
    pub sigma_star_agents: Vec<Mat>,
    #[serde(with = "crate::linalg::nested")]
    pub sigma_star_avg: Mat,
    pub eps_sup: f64,
    pub a_sup: f64,
    pub mode: MomentMode,
    /// Entrywise standard errors of `sigma_star_avg` (zero in exact mode).
    #[serde(with = "crate::linalg::nested")]
    pub sigma_star_avg_std_err: Mat,
}

impl NoiseMoments {
    pub fn zero(n_agents: usize, dim: usize) -> Self {
        let z = Mat::zeros(dim, dim);
        NoiseMoments {
            sigma_eps: vec![z.clone(); n_agents],
            sigma_a: vec![z.clone(); n_agents],
            sigma_star_agents: vec![z.clone(); n_agents],
            sigma_star_avg: z.clone(),
            eps_sup: 0.0,
            a_sup: 0.0,
            mode: MomentMode::Exact,
            sigma_star_avg_std_err: z,
        }
    }
}

// Running sums of the three outer products for one agent.
struct MomentSums {
    eps: Mat,
    a: Mat,
    star: Mat,
    star_sq: Mat,
}

impl MomentSums {
    fn new(d: usize) -> Self {
        MomentSums {
            eps: Mat::zeros(d, d),
            a: Mat::zeros(d, d),
            star: Mat::zeros(d, d),
            star_sq: Mat::zeros(d, d),
        }
    }

    fn add(&mut self, weight: f64, a_tilde: &Mat, eps_local: &Vector, eps_global: &Vector) {
        self.eps += eps_local * eps_local.transpose() * weight;
        self.a += a_tilde.transpose() * a_tilde * weight;
        let outer = eps_global * eps_global.transpose();
        self.star_sq += outer.component_mul(&outer) * weight;
        self.star += outer * weight;
    }
}

pub fn noise_moments<M: ObservationModel>(
    sys: &FederatedSystem,
    model: &M,
    mode: MomentMode,
) -> Result<NoiseMoments> {
    let n = sys.n_agents();
    let d = sys.dim();
    if model.n_agents() != n || model.dim() != d {
        return Err(Error::DimensionMismatch {
            what: "observation model",
            expected: n,
            found: model.n_agents(),
        });
    }
    let mut out = NoiseMoments::zero(n, d);
    out.mode = mode;
    let bounds = model.bounds();
    out.eps_sup = bounds.eps_sup;
    out.a_sup = bounds.a_sup;
    let mut star_var = Mat::zeros(d, d);

    for (c, agent) in sys.agents.iter().enumerate() {
        let theta_c = &sys.theta_star_agents[c];
        let mut sums = MomentSums::new(d);
        let mut accumulate = |w: f64, sample: &M::Sample| {
            let a_tilde = model.sample_matrix(c, sample) - &agent.a_bar;
            let b_tilde = model.sample_vector(c, sample) - &agent.b_bar;
            let eps_local = &a_tilde * theta_c - &b_tilde;
            let eps_global = &a_tilde * &sys.theta_star - &b_tilde;
            sums.add(w, &a_tilde, &eps_local, &eps_global);
        };
        match mode {
            MomentMode::Exact => {
                let outcomes = model.outcomes(c).ok_or(Error::NotEnumerable)?;
                for (p, s) in &outcomes {
                    accumulate(*p, s);
                }
            }
            MomentMode::MonteCarlo { draws, seed } => {
                if draws < 2 {
                    return Err(Error::TooFewPoints { needed: 2, found: draws });
                }
                let w = 1.0 / draws as f64;
                for i in 0..draws {
                    let mut stream = NoiseStreamKey::data(seed, i + 1, 0, c).stream();
                    let s = model.draw(c, &mut stream);
                    accumulate(w, &s);
                }
                // per-entry variance of the sample mean of eps eps^T
                let var = (&sums.star_sq - sums.star.component_mul(&sums.star))
                    .map(|v| v.max(0.0))
                    * (1.0 / (draws as f64 - 1.0));
                star_var += var;
            }
        }
        out.sigma_eps[c] = sums.eps;
        out.sigma_a[c] = sums.a;
        out.sigma_star_agents[c] = sums.star;
    }
    let nf = n as f64;
    out.sigma_star_avg = mean_matrix(out.sigma_star_agents.iter()).expect("nonempty");
    out.sigma_star_avg_std_err = star_var.map(|v| v.sqrt() / nf);
    Ok(out)
}
