//! Random Garnet MDPs and per-agent perturbations of them.

use rand::seq::index::sample;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::engine::stream::{CounterStream, NoiseStreamKey};
use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};

const LABEL_TRANSITIONS: u64 = 0x7472_616e;
const LABEL_REWARDS: u64 = 0x7265_7761;
const LABEL_PERTURB: u64 = 0x7065_7274;

/// Power iteration stops once `||pi P - pi||_1` drops below this.
pub const STATIONARY_TOLERANCE: f64 = 1e-12;
pub const STATIONARY_MAX_ITER: usize = 1_000_000;

fn default_states() -> usize {
    30
}
fn default_actions() -> usize {
    2
}
fn default_branching() -> usize {
    2
}
fn default_dim() -> usize {
    5
}
fn default_agents() -> usize {
    5
}
fn default_magnitude() -> f64 {
    0.1
}
fn default_discount() -> f64 {
    0.9
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GarnetSpec {
    #[serde(default = "default_states")]
    pub n_states: usize,
    #[serde(default = "default_actions")]
    pub n_actions: usize,
    #[serde(default = "default_branching")]
    pub branching: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_agents")]
    pub n_agents: usize,
    #[serde(default = "default_magnitude")]
    pub perturb_magnitude: f64,
    #[serde(default = "default_discount")]
    pub discount: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for GarnetSpec {
    fn default() -> Self {
        GarnetSpec {
            n_states: default_states(),
            n_actions: default_actions(),
            branching: default_branching(),
            dim: default_dim(),
            n_agents: default_agents(),
            perturb_magnitude: default_magnitude(),
            discount: default_discount(),
            seed: 0,
        }
    }
}

impl GarnetSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.n_states == 0 || self.n_actions == 0 || self.n_agents == 0 || self.dim == 0 {
            return bad("garnet sizes must be positive".into());
        }
        if self.branching == 0 || self.branching > self.n_states {
            return bad(format!("branching {} must lie in 1..={}", self.branching, self.n_states));
        }
        if self.dim > self.n_states {
            return bad(format!("feature dimension {} exceeds {} states", self.dim, self.n_states));
        }
        if !(0.0..1.0).contains(&self.perturb_magnitude) {
            return bad(format!("perturbation magnitude {} must lie in [0, 1)", self.perturb_magnitude));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return bad(format!("discount {} must lie in [0, 1)", self.discount));
        }
        Ok(())
    }
}

/// Finite MDP: one row-stochastic matrix per action and a per-state reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mdp {
    #[serde(with = "crate::linalg::nested::list")]
    pub transitions: Vec<Mat>,
    #[serde(with = "crate::linalg::flat")]
    pub reward: Vector,
}

impl Mdp {
    pub fn n_states(&self) -> usize {
        self.reward.len()
    }

    pub fn n_actions(&self) -> usize {
        self.transitions.len()
    }

    /// Kernel of the uniform policy, `A^-1 sum_a P[a]`.
    pub fn policy_kernel(&self) -> Mat {
        let n = self.n_states();
        let sum = self.transitions.iter().fold(Mat::zeros(n, n), |acc, p| acc + p);
        sum / self.n_actions() as f64
    }

    /// Largest deviation of a row sum from one, over all actions.
    pub fn max_row_defect(&self) -> f64 {
        self.transitions
            .iter()
            .flat_map(|p| p.row_iter().map(|r| (r.sum() - 1.0).abs()).collect::<Vec<_>>())
            .fold(0.0, f64::max)
    }
}

/// `k` nonnegative weights summing to one from sorted uniforms.
fn stick_breaking(k: usize, stream: &mut CounterStream) -> Vec<f64> {
    let mut cuts: Vec<f64> = (0..k - 1).map(|_| stream.next_uniform()).collect();
    cuts.sort_by(f64::total_cmp);
    let mut out = Vec::with_capacity(k);
    let mut prev = 0.0;
    for c in cuts {
        out.push(c - prev);
        prev = c;
    }
    out.push(1.0 - prev);
    out
}

/// Random Garnet MDP. For each state-action pair, `branching` distinct
/// successors are drawn uniformly and given stick-breaking probabilities;
/// rewards are i.i.d. standard normal per state.
pub fn generate_garnet(spec: &GarnetSpec) -> Result<Mdp> {
    spec.validate()?;
    let n = spec.n_states;
    let mut transitions = Vec::with_capacity(spec.n_actions);
    for a in 0..spec.n_actions {
        let mut p = Mat::zeros(n, n);
        for s in 0..n {
            let mut stream = NoiseStreamKey::env(spec.seed, LABEL_TRANSITIONS, a * n + s).stream();
            let succ = sample(&mut stream, n, spec.branching);
            let probs = stick_breaking(spec.branching, &mut stream);
            for (j, q) in succ.iter().zip(probs) {
                p[(s, j)] = q;
            }
        }
        transitions.push(p);
    }
    let mut stream = NoiseStreamKey::env(spec.seed, LABEL_REWARDS, 0).stream();
    let reward = Vector::from_fn(n, |_, _| StandardNormal.sample(&mut stream));
    Ok(Mdp { transitions, reward })
}

/// Convex perturbation on the fixed support: each row's nonzero entries `p`
/// become `(1 - m) p + m q` with `q` a fresh random sub-simplex on the same
/// support, and each reward moves by `m` times a standard normal.
pub fn perturb_mdp(base: &Mdp, magnitude: f64, agent_seed: u64) -> Result<Mdp> {
    if !(0.0..1.0).contains(&magnitude) {
        return Err(Error::InvalidArgument(format!(
            "perturbation magnitude {magnitude} must lie in [0, 1)"
        )));
    }
    let n = base.n_states();
    let mut out = base.clone();
    if magnitude == 0.0 {
        return Ok(out);
    }
    for (a, p) in out.transitions.iter_mut().enumerate() {
        for s in 0..n {
            let support: Vec<usize> = (0..n).filter(|&j| p[(s, j)] > 0.0).collect();
            let mut stream = NoiseStreamKey::env(agent_seed, LABEL_PERTURB, a * n + s).stream();
            let q = stick_breaking(support.len(), &mut stream);
            for (&j, qj) in support.iter().zip(q) {
                p[(s, j)] = (1.0 - magnitude) * p[(s, j)] + magnitude * qj;
            }
        }
    }
    let mut stream = NoiseStreamKey::env(agent_seed, LABEL_PERTURB, usize::MAX).stream();
    for r in out.reward.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut stream);
        *r += magnitude * z;
    }
    Ok(out)
}

/// Stationary distribution by power iteration from the first basis vector.
///
/// Periodic chains never settle and return [`Error::NoConvergence`].
pub fn stationary_distribution(p: &Mat) -> Result<Vector> {
    let n = p.nrows();
    if n == 0 || !p.is_square() {
        return Err(Error::DimensionMismatch {
            what: "transition matrix",
            expected: n,
            found: p.ncols(),
        });
    }
    let pt = p.transpose();
    let mut pi = Vector::zeros(n);
    pi[0] = 1.0;
    let mut next = Vector::zeros(n);
    let mut residual = f64::INFINITY;
    for _ in 0..STATIONARY_MAX_ITER {
        next.gemv(1.0, &pt, &pi, 0.0);
        let total = next.sum();
        next /= total;
        residual = (&next - &pi).lp_norm(1);
        std::mem::swap(&mut pi, &mut next);
        if residual <= STATIONARY_TOLERANCE {
            return Ok(pi);
        }
    }
    Err(Error::NoConvergence {
        iterations: STATIONARY_MAX_ITER,
        residual,
    })
}
