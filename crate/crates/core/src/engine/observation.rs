//! Per-agent samplers of the stochastic pair `(A^c(Z), b^c(Z))`.

use rand_distr::{weighted::WeightedAliasIndex, Distribution};
use serde::{Deserialize, Serialize};

use super::stream::{CounterStream, NoiseStreamKey};
use crate::error::{Error, Result};
use crate::linalg::{spectral_norm, Mat, Vector};
use crate::model::FederatedSystem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    FiniteEnumerable,
    SyntheticBounded,
    Custom,
}

/// Declared almost-sure bounds: `eps_sup >= sup ||eps^c(Z)||`,
/// `a_sup >= sup ||A^c(Z)||`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportBounds {
    pub eps_sup: f64,
    pub a_sup: f64,
}

/// A sampler of stochastic linear-system observations for each agent.
///
/// The engine only needs `draw` and `residual`; the remaining methods serve
/// moment computations and the plug-in covariance estimator.
pub trait ObservationModel: Sync {
    type Sample: Send;

    fn dim(&self) -> usize;
    fn n_agents(&self) -> usize;
    fn kind(&self) -> ModelKind;
    fn bounds(&self) -> SupportBounds;

    fn draw(&self, agent: usize, stream: &mut CounterStream) -> Self::Sample;

    /// `out = A(Z) theta - b(Z)`.
    fn residual(&self, agent: usize, sample: &Self::Sample, theta: &[f64], out: &mut [f64]);

    /// `theta_b -= steps[k] (A(Z) theta_b - b(Z))` for each `b = alive[k]`,
    /// with replicate `b` stored at `thetas[b d..(b + 1) d]`.
    fn weighted_steps(
        &self,
        agent: usize,
        sample: &Self::Sample,
        thetas: &mut [f64],
        alive: &[usize],
        steps: &[f64],
        scratch: &mut [f64],
    ) {
        let d = self.dim();
        for (&b, &step) in alive.iter().zip(steps) {
            let th = &mut thetas[b * d..(b + 1) * d];
            self.residual(agent, sample, th, scratch);
            for i in 0..d {
                th[i] -= step * scratch[i];
            }
        }
    }

    fn sample_matrix(&self, agent: usize, sample: &Self::Sample) -> Mat;
    fn sample_vector(&self, agent: usize, sample: &Self::Sample) -> Vector;

    /// `acc += A(Z)`.
    fn add_sample_matrix(&self, agent: usize, sample: &Self::Sample, acc: &mut Mat) {
        *acc += self.sample_matrix(agent, sample);
    }

    /// Full outcome list with probabilities, when the model is finite.
    fn outcomes(&self, _agent: usize) -> Option<Vec<(f64, Self::Sample)>> {
        None
    }

    fn outcome_count(&self, _agent: usize) -> Option<usize> {
        None
    }
}

/// One outcome of a finite observation space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FiniteOutcome {
    #[serde(with = "crate::linalg::nested")]
    pub a: Mat,
    #[serde(with = "crate::linalg::flat")]
    pub b: Vector,
    /// Optional factorization `A = u v^T`; enables O(d) residuals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank_one: Option<(Vec<f64>, Vec<f64>)>,
}

impl FiniteOutcome {
    pub fn dense(a: Mat, b: Vector) -> Self {
        FiniteOutcome {
            a,
            b,
            rank_one: None,
        }
    }

    pub fn rank_one(u: Vector, v: Vector, b: Vector) -> Self {
        FiniteOutcome {
            a: &u * v.transpose(),
            b,
            rank_one: Some((u.as_slice().to_vec(), v.as_slice().to_vec())),
        }
    }
}

#[derive(Debug, Clone)]
struct FiniteAgent {
    probs: Vec<f64>,
    outcomes: Vec<FiniteOutcome>,
    // row-major copy of every outcome matrix for the dense residual path
    a_rows: Vec<Vec<f64>>,
    sampler: WeightedAliasIndex<f64>,
}

/// Observation space given as finitely many weighted outcomes per agent.
#[derive(Debug, Clone)]
pub struct FiniteModel {
    dim: usize,
    agents: Vec<FiniteAgent>,
    bounds: SupportBounds,
}

impl FiniteModel {
    /// `agents[c]` lists `(probability, outcome)` pairs; probabilities are
    /// renormalized. `local_solutions[c]` is used to compute `eps_sup`.
    pub fn new(
        agents: Vec<Vec<(f64, FiniteOutcome)>>,
        local_solutions: &[Vector],
    ) -> Result<Self> {
        let dim = agents
            .first()
            .and_then(|a| a.first())
            .map(|(_, o)| o.b.len())
            .ok_or(Error::EmptyInput)?;
        if local_solutions.len() != agents.len() {
            return Err(Error::DimensionMismatch {
                what: "local solutions",
                expected: agents.len(),
                found: local_solutions.len(),
            });
        }
        let mut built = Vec::with_capacity(agents.len());
        let mut eps_sup = 0.0f64;
        let mut a_sup = 0.0f64;
        for (list, theta_c) in agents.into_iter().zip(local_solutions) {
            if list.is_empty() {
                return Err(Error::EmptyInput);
            }
            let total: f64 = list.iter().map(|(p, _)| *p).sum();
            if !(total > 0.0) || list.iter().any(|(p, _)| !(*p >= 0.0)) {
                return Err(Error::InvalidArgument("outcome probabilities must be nonnegative with positive sum".into()));
            }
            let probs: Vec<f64> = list.iter().map(|(p, _)| p / total).collect();
            let outcomes: Vec<FiniteOutcome> = list.into_iter().map(|(_, o)| o).collect();
            for o in &outcomes {
                if o.a.nrows() != dim || o.a.ncols() != dim || o.b.len() != dim {
                    return Err(Error::DimensionMismatch {
                        what: "finite outcome",
                        expected: dim,
                        found: o.b.len(),
                    });
                }
            }
            let mean_a = outcomes
                .iter()
                .zip(&probs)
                .fold(Mat::zeros(dim, dim), |acc, (o, p)| acc + &o.a * *p);
            let mean_b = outcomes
                .iter()
                .zip(&probs)
                .fold(Vector::zeros(dim), |acc, (o, p)| acc + &o.b * *p);
            for (o, p) in outcomes.iter().zip(&probs) {
                if *p == 0.0 {
                    continue;
                }
                a_sup = a_sup.max(spectral_norm(&o.a)).max(spectral_norm(&(&o.a - &mean_a)));
                let eps = (&o.a - &mean_a) * theta_c - (&o.b - &mean_b);
                eps_sup = eps_sup.max(eps.norm());
            }
            let a_rows = outcomes
                .iter()
                .map(|o| o.a.transpose().as_slice().to_vec())
                .collect();
            let sampler = WeightedAliasIndex::new(probs.clone())
                .map_err(|e| Error::InvalidArgument(format!("outcome weights: {e}")))?;
            built.push(FiniteAgent {
                probs,
                outcomes,
                a_rows,
                sampler,
            });
        }
        Ok(FiniteModel {
            dim,
            agents: built,
            bounds: SupportBounds { eps_sup, a_sup },
        })
    }

    /// Noise-free model: every draw returns `(Abar^c, bbar^c)`.
    pub fn deterministic(sys: &FederatedSystem) -> Self {
        let agents = sys
            .agents()
            .iter()
            .map(|a| vec![(1.0, FiniteOutcome::dense(a.a_bar.clone(), a.b_bar.clone()))])
            .collect();
        FiniteModel::new(agents, sys.theta_star_agents()).expect("agent systems are validated")
    }

    pub fn probabilities(&self, agent: usize) -> &[f64] {
        &self.agents[agent].probs
    }

    pub fn outcome(&self, agent: usize, index: usize) -> &FiniteOutcome {
        &self.agents[agent].outcomes[index]
    }

    /// Probability-weighted mean `(E A, E b)` for one agent.
    pub fn mean(&self, agent: usize) -> (Mat, Vector) {
        let ag = &self.agents[agent];
        let mut a = Mat::zeros(self.dim, self.dim);
        let mut b = Vector::zeros(self.dim);
        for (o, p) in ag.outcomes.iter().zip(&ag.probs) {
            a += &o.a * *p;
            b += &o.b * *p;
        }
        (a, b)
    }
}

impl ObservationModel for FiniteModel {
    type Sample = usize;

    fn dim(&self) -> usize {
        self.dim
    }

    fn n_agents(&self) -> usize {
        self.agents.len()
    }

    fn kind(&self) -> ModelKind {
        ModelKind::FiniteEnumerable
    }

    fn bounds(&self) -> SupportBounds {
        self.bounds
    }

    #[inline]
    fn draw(&self, agent: usize, stream: &mut CounterStream) -> usize {
        self.agents[agent].sampler.sample(stream)
    }

    #[inline]
    fn residual(&self, agent: usize, sample: &usize, theta: &[f64], out: &mut [f64]) {
        let ag = &self.agents[agent];
        let o = &ag.outcomes[*sample];
        let b = o.b.as_slice();
        match &o.rank_one {
            Some((u, v)) => {
                let dot: f64 = v.iter().zip(theta).map(|(x, y)| x * y).sum();
                for i in 0..out.len() {
                    out[i] = u[i] * dot - b[i];
                }
            }
            None => {
                let rows = &ag.a_rows[*sample];
                let d = self.dim;
                for i in 0..d {
                    let row = &rows[i * d..(i + 1) * d];
                    out[i] = row.iter().zip(theta).map(|(x, y)| x * y).sum::<f64>() - b[i];
                }
            }
        }
    }

    fn weighted_steps(
        &self,
        agent: usize,
        sample: &usize,
        thetas: &mut [f64],
        alive: &[usize],
        steps: &[f64],
        scratch: &mut [f64],
    ) {
        let d = self.dim;
        let o = &self.agents[agent].outcomes[*sample];
        let Some((u, v)) = &o.rank_one else {
            for (&b, &step) in alive.iter().zip(steps) {
                let th = &mut thetas[b * d..(b + 1) * d];
                self.residual(agent, sample, th, scratch);
                for i in 0..d {
                    th[i] -= step * scratch[i];
                }
            }
            return;
        };
        let (u, v, bv) = (&u[..d], &v[..d], &o.b.as_slice()[..d]);
        for (&b, &step) in alive.iter().zip(steps) {
            let th = &mut thetas[b * d..(b + 1) * d];
            let dot: f64 = v.iter().zip(th.iter()).map(|(x, y)| x * y).sum();
            for i in 0..d {
                th[i] -= step * (u[i] * dot - bv[i]);
            }
        }
    }

    fn sample_matrix(&self, agent: usize, sample: &usize) -> Mat {
        self.agents[agent].outcomes[*sample].a.clone()
    }

    fn sample_vector(&self, agent: usize, sample: &usize) -> Vector {
        self.agents[agent].outcomes[*sample].b.clone()
    }

    fn add_sample_matrix(&self, agent: usize, sample: &usize, acc: &mut Mat) {
        let o = &self.agents[agent].outcomes[*sample];
        match &o.rank_one {
            Some((u, v)) => {
                for j in 0..self.dim {
                    for i in 0..self.dim {
                        acc[(i, j)] += u[i] * v[j];
                    }
                }
            }
            None => *acc += &o.a,
        }
    }

    fn outcomes(&self, agent: usize) -> Option<Vec<(f64, usize)>> {
        Some(
            self.agents[agent]
                .probs
                .iter()
                .copied()
                .enumerate()
                .map(|(i, p)| (p, i))
                .collect(),
        )
    }

    fn outcome_count(&self, agent: usize) -> Option<usize> {
        Some(self.agents[agent].outcomes.len())
    }
}

/// Additive bounded noise: `A^c(Z) = Abar^c + U_A`, `b^c(Z) = bbar^c + U_b`
/// with every entry of `U_A`, `U_b` i.i.d. uniform on `[-scale, scale]`.
#[derive(Debug, Clone)]
pub struct UniformNoiseModel {
    dim: usize,
    scale: f64,
    a_rows: Vec<Vec<f64>>,
    b_bar: Vec<Vector>,
    a_bar: Vec<Mat>,
    bounds: SupportBounds,
}

impl UniformNoiseModel {
    pub fn new(sys: &FederatedSystem, scale: f64) -> Result<Self> {
        if !(scale >= 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise scale {scale} must be nonnegative")));
        }
        let d = sys.dim();
        let a_bar: Vec<Mat> = sys.agents().iter().map(|a| a.a_bar.clone()).collect();
        let b_bar: Vec<Vector> = sys.agents().iter().map(|a| a.b_bar.clone()).collect();
        let a_rows = a_bar.iter().map(|a| a.transpose().as_slice().to_vec()).collect();
        // ||U_A|| <= ||U_A||_F <= scale * d and ||U_b|| <= scale * sqrt(d)
        let dd = d as f64;
        let a_sup = a_bar
            .iter()
            .map(|a| spectral_norm(a) + scale * dd)
            .fold(0.0, f64::max);
        let eps_sup = sys
            .theta_star_agents()
            .iter()
            .map(|th| scale * dd * th.norm() + scale * dd.sqrt())
            .fold(0.0, f64::max);
        Ok(UniformNoiseModel {
            dim: d,
            scale,
            a_rows,
            b_bar,
            a_bar,
            bounds: SupportBounds { eps_sup, a_sup },
        })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

impl ObservationModel for UniformNoiseModel {
    /// Noise entries, `d*d` matrix entries (row-major) then `d` vector entries.
    type Sample = Vec<f64>;

    fn dim(&self) -> usize {
        self.dim
    }

    fn n_agents(&self) -> usize {
        self.a_bar.len()
    }

    fn kind(&self) -> ModelKind {
        ModelKind::SyntheticBounded
    }

    fn bounds(&self) -> SupportBounds {
        self.bounds
    }

    fn draw(&self, _agent: usize, stream: &mut CounterStream) -> Vec<f64> {
        let n = self.dim * self.dim + self.dim;
        if self.scale == 0.0 {
            return vec![0.0; n];
        }
        (0..n)
            .map(|_| self.scale * (2.0 * stream.next_uniform() - 1.0))
            .collect()
    }

    #[inline]
    fn residual(&self, agent: usize, sample: &Vec<f64>, theta: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let rows = &self.a_rows[agent];
        let b = self.b_bar[agent].as_slice();
        for i in 0..d {
            let mut acc = 0.0;
            for j in 0..d {
                acc += (rows[i * d + j] + sample[i * d + j]) * theta[j];
            }
            out[i] = acc - b[i] - sample[d * d + i];
        }
    }

    fn sample_matrix(&self, agent: usize, sample: &Vec<f64>) -> Mat {
        let d = self.dim;
        &self.a_bar[agent] + Mat::from_row_slice(d, d, &sample[..d * d])
    }

    fn sample_vector(&self, agent: usize, sample: &Vec<f64>) -> Vector {
        let d = self.dim;
        &self.b_bar[agent] + Vector::from_column_slice(&sample[d * d..])
    }
}

/// Outcome of [`self_check`]: largest standardized deviation of the Monte
/// Carlo means from `(Abar^c, bbar^c)` and the largest `||A(Z)||` seen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfCheck {
    pub max_z_score: f64,
    pub max_a_norm: f64,
    pub draws: usize,
}

impl SelfCheck {
    /// Means within 4 standard errors and every sample within `a_sup`.
    pub fn passed(&self, bounds: &SupportBounds) -> bool {
        self.max_z_score <= 4.0 && self.max_a_norm <= bounds.a_sup * (1.0 + 1e-12)
    }
}

/// Monte-Carlo unbiasedness check of a model against its federated system.
pub fn self_check<M: ObservationModel>(
    sys: &FederatedSystem,
    model: &M,
    draws: usize,
    seed: u64,
) -> SelfCheck {
    let d = model.dim();
    let mut max_z = 0.0f64;
    let mut max_norm = 0.0f64;
    for (c, agent) in sys.agents().iter().enumerate() {
        let m = draws as f64;
        let mut sum = Vector::zeros(d * d + d);
        let mut sum_sq = Vector::zeros(d * d + d);
        for i in 0..draws {
            let mut stream = NoiseStreamKey::data(seed, i + 1, 0, c).stream();
            let s = model.draw(c, &mut stream);
            let a = model.sample_matrix(c, &s);
            let b = model.sample_vector(c, &s);
            max_norm = max_norm.max(spectral_norm(&a));
            let flat = Vector::from_iterator(
                d * d + d,
                a.as_slice().iter().chain(b.as_slice()).copied(),
            );
            sum_sq += flat.component_mul(&flat);
            sum += flat;
        }
        let truth: Vec<f64> = agent
            .a_bar
            .as_slice()
            .iter()
            .chain(agent.b_bar.as_slice())
            .copied()
            .collect();
        for k in 0..d * d + d {
            let mean = sum[k] / m;
            let var = (sum_sq[k] / m - mean * mean).max(0.0);
            let se = (var / m).sqrt();
            let dev = (mean - truth[k]).abs();
            let z = if se > 0.0 {
                dev / se
            } else if dev <= 1e-12 * (1.0 + truth[k].abs()) {
                0.0
            } else {
                f64::INFINITY
            };
            max_z = max_z.max(z);
        }
    }
    SelfCheck {
        max_z_score: max_z,
        max_a_norm: max_norm,
        draws,
    }
}
