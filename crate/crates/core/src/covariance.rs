//! Covariance machinery: the Lyapunov solver, the asymptotic covariance
//! `Sigma_inf`, the finite-round leading covariance `Sigma_hat_t`, the full
//! `Sigma_t` including the heterogeneity term, and the plug-in estimate.

use serde::{Deserialize, Serialize};

use crate::engine::observation::ObservationModel;
use crate::engine::run::PluginAccumulator;
use crate::engine::stream::NoiseStreamKey;
use crate::error::{Error, Result};
use crate::linalg::{condition_number, min_real_eigenvalue, symmetrize, Mat, Vector, SINGULAR_CONDITION};
use crate::model::{FederatedSystem, NoiseMoments, HURWITZ_TOLERANCE};
use crate::schedule::Schedule;

/// Models with at most this many outcomes per agent get exact `Sigma_t`.
pub const EXACT_OUTCOME_LIMIT: usize = 10_000;

fn kronecker_sum(a: &Mat) -> Mat {
    let d = a.nrows();
    let eye = Mat::identity(d, d);
    eye.kronecker(a) + a.kronecker(&eye)
}

/// `||a sigma + sigma a^T - c||_F`.
pub fn lyapunov_residual(a: &Mat, sigma: &Mat, c: &Mat) -> f64 {
    (a * sigma + sigma * a.transpose() - c).norm()
}

/// Solves `a sigma + sigma a^T = c` for symmetric `sigma`.
///
/// `a` must have spectrum in the open right half-plane. The equation is
/// vectorized with a Kronecker sum and solved densely, followed by one round
/// of iterative refinement.
pub fn solve_lyapunov(a: &Mat, c: &Mat) -> Result<Mat> {
    let d = a.nrows();
    if !a.is_square() || c.nrows() != d || c.ncols() != d {
        return Err(Error::DimensionMismatch {
            what: "lyapunov operands",
            expected: d,
            found: c.nrows(),
        });
    }
    let min_real = min_real_eigenvalue(a);
    if !(min_real > HURWITZ_TOLERANCE) {
        return Err(Error::UnstableMatrix { min_real });
    }
    let k = kronecker_sum(a);
    let cond = if d <= 20 {
        condition_number(&k)
    } else {
        // singular values of a 400+ square matrix are slow; use the pivots
        let lu = k.clone().lu();
        let diag = lu.u().diagonal().map(f64::abs);
        diag.max() / diag.min()
    };
    if !(cond <= SINGULAR_CONDITION) {
        return Err(Error::SingularKronecker { cond });
    }
    let lu = k.lu();
    let rhs = Vector::from_column_slice(c.as_slice());
    let mut x = lu.solve(&rhs).ok_or(Error::SingularKronecker { cond })?;
    let sigma = Mat::from_column_slice(d, d, x.as_slice());
    let resid = c - (a * &sigma + &sigma * a.transpose());
    if let Some(dx) = lu.solve(&Vector::from_column_slice(resid.as_slice())) {
        x += dx;
    }
    Ok(symmetrize(&Mat::from_column_slice(d, d, x.as_slice())))
}

/// `Sigma_inf` solving `Abar S + S Abar^T = N^-1 Sigma*_avg`.
pub fn sigma_infinity(sys: &FederatedSystem, moments: &NoiseMoments) -> Result<Mat> {
    check_moments(sys, moments)?;
    let c = &moments.sigma_star_avg / sys.n_agents() as f64;
    solve_lyapunov(sys.a_avg(), &c)
}

fn check_moments(sys: &FederatedSystem, moments: &NoiseMoments) -> Result<()> {
    let d = sys.dim();
    if moments.sigma_star_avg.nrows() != d || moments.sigma_star_avg.ncols() != d {
        return Err(Error::DimensionMismatch {
            what: "sigma_star_avg",
            expected: d,
            found: moments.sigma_star_avg.nrows(),
        });
    }
    Ok(())
}

/// `G_avg = N^-1 sum_c (I - eta Abar^c)^h`.
pub fn averaged_contraction(sys: &FederatedSystem, eta: f64, h: usize) -> Mat {
    let d = sys.dim();
    let eye = Mat::identity(d, d);
    let mut g = Mat::zeros(d, d);
    for agent in sys.agents() {
        g += crate::linalg::mat_pow(&(&eye - &agent.a_bar * eta), h);
    }
    g / sys.n_agents() as f64
}

/// `Sigma_hat_t = N^-1 eta_t^-1 sum_{s<=t} eta_s^2 H_s P_s Sigma*_avg P_s^T`
/// with `P_s = G_avg_t ... G_avg_{s+1}`.
pub fn sigma_hat_t(sys: &FederatedSystem, moments: &NoiseMoments, sched: &Schedule, t: usize) -> Result<Mat> {
    Ok(sigma_hat_series(sys, moments, sched, &[t])?.remove(0))
}

/// [`sigma_hat_t`] at every requested round in one forward pass.
///
/// Uses `X_t = G_t X_{t-1} G_t^T + eta_t^2 H_t Sigma*_avg / N` and
/// `Sigma_hat_t = X_t / eta_t`, so the cost is linear in the largest round.
pub fn sigma_hat_series(
    sys: &FederatedSystem,
    moments: &NoiseMoments,
    sched: &Schedule,
    rounds: &[usize],
) -> Result<Vec<Mat>> {
    check_moments(sys, moments)?;
    check_rounds(rounds)?;
    let d = sys.dim();
    let star = &moments.sigma_star_avg / sys.n_agents() as f64;
    let mut x = Mat::zeros(d, d);
    let mut out = Vec::with_capacity(rounds.len());
    let mut wanted = rounds.iter().peekable();
    let last = *rounds.iter().max().expect("nonempty");
    for t in 1..=last {
        let eta = sched.step_size_unchecked(t);
        let h = sched.local_steps_unchecked(t);
        let g = averaged_contraction(sys, eta, h);
        x = &g * &x * g.transpose() + &star * (eta * eta * h as f64);
        while wanted.peek() == Some(&&t) {
            wanted.next();
            out.push(symmetrize(&x) / eta);
        }
    }
    Ok(out)
}

fn check_rounds(rounds: &[usize]) -> Result<()> {
    if rounds.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(&t) = rounds.iter().find(|&&t| t < 1) {
        return Err(Error::InvalidRound(t));
    }
    if rounds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("rounds must be ascending".into()));
    }
    Ok(())
}

/// Second moments feeding the full covariance for one agent.
///
/// With `eps = Atilde(Z) theta*^c - btilde(Z)` and `het = Atilde(Z) (theta*^c - theta*)`:
/// `eps_eps = E[eps eps^T]`, `eps_het = E[eps het^T]`, `het_het = E[het het^T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBlocks {
    pub eps_eps: Mat,
    pub eps_het: Mat,
    pub het_het: Mat,
}

impl NoiseBlocks {
    fn zeros(d: usize) -> Self {
        NoiseBlocks {
            eps_eps: Mat::zeros(d, d),
            eps_het: Mat::zeros(d, d),
            het_het: Mat::zeros(d, d),
        }
    }

    fn add(&mut self, w: f64, eps: &Vector, het: &Vector) {
        self.eps_eps += eps * eps.transpose() * w;
        self.eps_het += eps * het.transpose() * w;
        self.het_het += het * het.transpose() * w;
    }
}

fn centered_pair<M: ObservationModel>(
    sys: &FederatedSystem,
    model: &M,
    c: usize,
    sample: &M::Sample,
) -> (Vector, Vector) {
    let agent = &sys.agents()[c];
    let a_tilde = model.sample_matrix(c, sample) - &agent.a_bar;
    let b_tilde = model.sample_vector(c, sample) - &agent.b_bar;
    let theta_c = &sys.theta_star_agents()[c];
    let eps = &a_tilde * theta_c - b_tilde;
    let het = &a_tilde * (theta_c - sys.theta_star());
    (eps, het)
}

/// Exact [`NoiseBlocks`] for every agent by enumerating the outcomes.
pub fn noise_blocks_exact<M: ObservationModel>(sys: &FederatedSystem, model: &M) -> Result<Vec<NoiseBlocks>> {
    check_model(sys, model)?;
    (0..sys.n_agents())
        .map(|c| {
            let outcomes = model.outcomes(c).ok_or(Error::NotEnumerable)?;
            let mut blocks = NoiseBlocks::zeros(sys.dim());
            for (p, s) in &outcomes {
                let (eps, het) = centered_pair(sys, model, c, s);
                blocks.add(*p, &eps, &het);
            }
            Ok(blocks)
        })
        .collect()
}

/// Monte-Carlo [`NoiseBlocks`] from `draws` samples per agent.
pub fn noise_blocks_mc<M: ObservationModel>(
    sys: &FederatedSystem,
    model: &M,
    draws: usize,
    seed: u64,
) -> Result<Vec<NoiseBlocks>> {
    check_model(sys, model)?;
    if draws == 0 {
        return Err(Error::EmptySamples);
    }
    let w = 1.0 / draws as f64;
    Ok((0..sys.n_agents())
        .map(|c| {
            let mut blocks = NoiseBlocks::zeros(sys.dim());
            for i in 0..draws {
                let s = model.draw(c, &mut NoiseStreamKey::data(seed, i + 1, 0, c).stream());
                let (eps, het) = centered_pair(sys, model, c, &s);
                blocks.add(w, &eps, &het);
            }
            blocks
        })
        .collect())
}

fn check_model<M: ObservationModel>(sys: &FederatedSystem, model: &M) -> Result<()> {
    if model.n_agents() != sys.n_agents() || model.dim() != sys.dim() {
        return Err(Error::DimensionMismatch {
            what: "observation model",
            expected: sys.n_agents(),
            found: model.n_agents(),
        });
    }
    Ok(())
}

/// `sum_c sum_h E[u u^T]` for one round, where
/// `u = B_c^{H-h} eps - B_c^{h-1} het` and `B_c = I - eta Abar^c`.
fn round_noise(sys: &FederatedSystem, blocks: &[NoiseBlocks], eta: f64, h_t: usize) -> Mat {
    let d = sys.dim();
    let eye = Mat::identity(d, d);
    let mut q = Mat::zeros(d, d);
    for (agent, nb) in sys.agents().iter().zip(blocks) {
        let b = &eye - &agent.a_bar * eta;
        let mut powers = Vec::with_capacity(h_t);
        powers.push(eye.clone());
        for k in 1..h_t {
            powers.push(&b * &powers[k - 1]);
        }
        for h in 1..=h_t {
            let l = &powers[h_t - h];
            let r = &powers[h - 1];
            let cross = l * &nb.eps_het * r.transpose();
            q += l * &nb.eps_eps * l.transpose() - &cross - cross.transpose()
                + r * &nb.het_het * r.transpose();
        }
    }
    q
}

/// Full `Sigma_t` at each requested round from precomputed noise blocks.
pub fn sigma_t_series_from_blocks(
    sys: &FederatedSystem,
    blocks: &[NoiseBlocks],
    sched: &Schedule,
    rounds: &[usize],
) -> Result<Vec<Mat>> {
    check_rounds(rounds)?;
    if blocks.len() != sys.n_agents() {
        return Err(Error::DimensionMismatch {
            what: "noise blocks",
            expected: sys.n_agents(),
            found: blocks.len(),
        });
    }
    let d = sys.dim();
    let n2 = (sys.n_agents() * sys.n_agents()) as f64;
    let mut y = Mat::zeros(d, d);
    let mut out = Vec::with_capacity(rounds.len());
    let mut wanted = rounds.iter().peekable();
    let last = *rounds.iter().max().expect("nonempty");
    for t in 1..=last {
        let eta = sched.step_size_unchecked(t);
        let h = sched.local_steps_unchecked(t);
        let g = averaged_contraction(sys, eta, h);
        let q = round_noise(sys, blocks, eta, h);
        y = &g * &y * g.transpose() + q * (eta * eta / n2);
        while wanted.peek() == Some(&&t) {
            wanted.next();
            out.push(symmetrize(&y) / eta);
        }
    }
    Ok(out)
}

/// Full `Sigma_t = E[M_t M_t^T]` by exact enumeration of a finite model.
pub fn sigma_t_full<M: ObservationModel>(
    sys: &FederatedSystem,
    model: &M,
    sched: &Schedule,
    t: usize,
) -> Result<Mat> {
    let blocks = noise_blocks_exact(sys, model)?;
    Ok(sigma_t_series_from_blocks(sys, &blocks, sched, &[t])?.remove(0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaTMode {
    Exact,
    MonteCarlo { draws: usize, batches: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaTEstimate {
    pub value: Mat,
    /// Entrywise standard error across Monte-Carlo batches.
    pub std_err: Option<Mat>,
    pub mode: SigmaTMode,
}

/// `Sigma_t` with automatic mode selection: exact enumeration when every
/// agent declares at most [`EXACT_OUTCOME_LIMIT`] outcomes, otherwise
/// `batches` independent Monte-Carlo batches of `draws / batches` samples.
pub fn sigma_t<M: ObservationModel>(
    sys: &FederatedSystem,
    model: &M,
    sched: &Schedule,
    t: usize,
    draws: usize,
    batches: usize,
    seed: u64,
) -> Result<SigmaTEstimate> {
    let exact = (0..sys.n_agents())
        .all(|c| model.outcome_count(c).is_some_and(|n| n <= EXACT_OUTCOME_LIMIT));
    if exact {
        return Ok(SigmaTEstimate {
            value: sigma_t_full(sys, model, sched, t)?,
            std_err: None,
            mode: SigmaTMode::Exact,
        });
    }
    if batches < 2 || draws < batches {
        return Err(Error::TooFewPoints {
            needed: 2,
            found: batches.min(draws),
        });
    }
    let per = draws / batches;
    let estimates = (0..batches)
        .map(|k| {
            let blocks = noise_blocks_mc(sys, model, per, crate::engine::stream::derive_seed(seed, 0x5147, k as u64))?;
            Ok(sigma_t_series_from_blocks(sys, &blocks, sched, &[t])?.remove(0))
        })
        .collect::<Result<Vec<Mat>>>()?;
    let k = batches as f64;
    let mean = estimates.iter().fold(Mat::zeros(sys.dim(), sys.dim()), |a, m| a + m) / k;
    let var = estimates
        .iter()
        .fold(Mat::zeros(sys.dim(), sys.dim()), |a, m| {
            let dev = m - &mean;
            a + dev.component_mul(&dev)
        })
        / (k - 1.0);
    Ok(SigmaTEstimate {
        value: mean,
        std_err: Some(var.map(|v| (v / k).sqrt())),
        mode: SigmaTMode::MonteCarlo { draws, batches, seed },
    })
}

/// Which noise proxy the plug-in estimator uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PluginVariant {
    /// `A(Z) theta_{s-1} - b(Z)`: uses only observed data.
    #[default]
    Observable,
    /// The same quantity with `Abar^c theta_{s-1} - bbar^c` subtracted; needs
    /// the true means and exists for ablation only.
    OracleCentered,
}

/// Data-driven estimate of `Sigma_inf` from the run's accumulated sums.
///
/// Both the noise covariance and the design matrix are averaged over
/// `N * H_bar_t` samples; the result solves the Lyapunov equation with the
/// averaged design matrix and `N^-1` times the noise covariance.
pub fn plugin_sigma_infinity(acc: &PluginAccumulator, variant: PluginVariant) -> Result<Mat> {
    if acc.h_bar == 0 || acc.n_agents == 0 {
        return Err(Error::EmptySamples);
    }
    let count = (acc.n_agents * acc.h_bar) as f64;
    let eps = match variant {
        PluginVariant::Observable => &acc.eps_outer,
        PluginVariant::OracleCentered => &acc.eps_outer_centered,
    };
    let sigma_star = eps / count;
    let a_t = &acc.a_sum / count;
    solve_lyapunov(&a_t, &(sigma_star / acc.n_agents as f64))
}

/// The covariance matrices associated with one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSet {
    #[serde(with = "crate::linalg::nested")]
    pub sigma_star_avg: Mat,
    #[serde(with = "crate::linalg::nested")]
    pub sigma_inf: Mat,
    #[serde(with = "crate::linalg::nested")]
    pub sigma_hat_t: Mat,
    #[serde(default, with = "crate::linalg::nested::option")]
    pub sigma_t: Option<Mat>,
    pub t: usize,
}

impl CovarianceSet {
    /// `Sigma*_avg`, `Sigma_inf` and `Sigma_hat_t`; `Sigma_t` is filled in
    /// when a finite model is supplied.
    pub fn compute<M: ObservationModel>(
        sys: &FederatedSystem,
        moments: &NoiseMoments,
        sched: &Schedule,
        t: usize,
        model: Option<&M>,
    ) -> Result<Self> {
        if t < 1 {
            return Err(Error::InvalidRound(t));
        }
        let sigma_t = match model {
            Some(m) => Some(sigma_t_full(sys, m, sched, t)?),
            None => None,
        };
        Ok(CovarianceSet {
            sigma_star_avg: moments.sigma_star_avg.clone(),
            sigma_inf: sigma_infinity(sys, moments)?,
            sigma_hat_t: sigma_hat_t(sys, moments, sched, t)?,
            sigma_t,
            t,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::observation::{FiniteModel, FiniteOutcome};
    use crate::model::{build_federated_system, noise_moments, AgentSystem, MomentMode};
    use rand::{rngs::StdRng, Rng, SeedableRng};

    fn scalar(x: f64) -> Mat {
        Mat::from_element(1, 1, x)
    }

    fn random_stable(rng: &mut StdRng, d: usize) -> Mat {
        let m = Mat::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        // shift the spectrum right of the imaginary axis
        let shift = -min_real_eigenvalue(&m) + rng.random_range(0.1..1.0);
        m + Mat::identity(d, d) * shift
    }

    #[test]
    fn scalar_lyapunov() {
        let s = solve_lyapunov(&scalar(1.0), &scalar(1.0)).unwrap();
        assert!((s[(0, 0)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn diagonal_closed_form() {
        let a = Mat::from_diagonal(&Vector::from_vec(vec![1.0, 2.0]));
        let s = solve_lyapunov(&a, &Mat::identity(2, 2)).unwrap();
        assert!((s[(0, 0)] - 0.5).abs() < 1e-14);
        assert!((s[(1, 1)] - 0.25).abs() < 1e-14);
        assert!(s[(0, 1)].abs() < 1e-15 && s[(1, 0)].abs() < 1e-15);
    }

    #[test]
    fn zero_right_hand_side() {
        let mut rng = StdRng::seed_from_u64(3);
        let a = random_stable(&mut rng, 4);
        assert_eq!(solve_lyapunov(&a, &Mat::zeros(4, 4)).unwrap(), Mat::zeros(4, 4));
    }

    #[test]
    fn random_residuals() {
        let mut rng = StdRng::seed_from_u64(11);
        for k in 0..100 {
            let d = 1 + k % 10;
            let a = random_stable(&mut rng, d);
            let g = Mat::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
            let c = &g * g.transpose();
            let s = solve_lyapunov(&a, &c).unwrap();
            let r = lyapunov_residual(&a, &s, &c);
            assert!(r <= 1e-10 * (1.0 + c.norm()), "d={d} residual {r}");
            assert_eq!(s, s.transpose());
        }
    }

    #[test]
    fn unstable_is_rejected() {
        let a = Mat::from_diagonal(&Vector::from_vec(vec![1.0, -0.5]));
        assert!(matches!(
            solve_lyapunov(&a, &Mat::identity(2, 2)),
            Err(Error::UnstableMatrix { .. })
        ));
    }

    fn scalar_system(a: f64) -> FederatedSystem {
        build_federated_system(vec![AgentSystem::new(scalar(a), Vector::zeros(1))]).unwrap()
    }

    fn scalar_moments(star: f64) -> NoiseMoments {
        let mut m = NoiseMoments::zero(1, 1);
        m.sigma_star_avg = scalar(star);
        m.sigma_star_agents = vec![scalar(star)];
        m
    }

    #[test]
    fn scalar_sigma_infinity() {
        let sys = scalar_system(1.0);
        let s = sigma_infinity(&sys, &scalar_moments(1.0)).unwrap();
        assert!((s[(0, 0)] - 0.5).abs() < 1e-12);
        let z = sigma_infinity(&sys, &scalar_moments(0.0)).unwrap();
        assert_eq!(z[(0, 0)], 0.0);
    }

    #[test]
    fn sigma_hat_first_round() {
        let sys = scalar_system(1.5);
        let sched = Schedule::constant(0.1, 3).unwrap();
        let s = sigma_hat_t(&sys, &scalar_moments(2.0), &sched, 1).unwrap();
        assert!((s[(0, 0)] - 0.1 * 3.0 * 2.0).abs() < 1e-15);
    }

    #[test]
    fn sigma_hat_geometric_series() {
        let sys = scalar_system(1.0);
        let eta = 0.05;
        let sched = Schedule::constant(eta, 1).unwrap();
        for t in [1usize, 7, 100, 2000] {
            let s = sigma_hat_t(&sys, &scalar_moments(1.0), &sched, t).unwrap()[(0, 0)];
            let closed = (1.0 - (1.0 - eta).powi(2 * t as i32)) / (2.0 - eta);
            assert!((s - closed).abs() < 1e-12, "t={t}: {s} vs {closed}");
        }
    }

    // Two agents in d = 2 with four outcomes each, heterogeneous solutions.
    fn finite_fixture() -> (FederatedSystem, FiniteModel) {
        let outcome = |a: [f64; 4], b: [f64; 2]| {
            FiniteOutcome::dense(Mat::from_row_slice(2, 2, &a), Vector::from_column_slice(&b))
        };
        let lists = vec![
            vec![
                (0.25, outcome([1.4, 0.1, 0.0, 0.9], [1.0, 0.2])),
                (0.25, outcome([0.8, -0.2, 0.3, 1.3], [0.4, -0.1])),
                (0.3, outcome([1.1, 0.0, -0.1, 1.0], [0.9, 0.5])),
                (0.2, outcome([0.9, 0.3, 0.1, 1.1], [0.2, 0.3])),
            ],
            vec![
                (0.5, outcome([2.0, 0.4, -0.2, 1.6], [-0.5, 1.0])),
                (0.5, outcome([1.6, -0.4, 0.2, 1.2], [0.1, 0.6])),
            ],
        ];
        let mut agents = Vec::new();
        for list in &lists {
            let total: f64 = list.iter().map(|(p, _)| p).sum();
            let a = list.iter().fold(Mat::zeros(2, 2), |acc, (p, o)| acc + &o.a * (*p / total));
            let b = list.iter().fold(Vector::zeros(2), |acc, (p, o)| acc + &o.b * (*p / total));
            agents.push(AgentSystem::new(a, b));
        }
        let sys = build_federated_system(agents).unwrap();
        let model = FiniteModel::new(lists, sys.theta_star_agents()).unwrap();
        (sys, model)
    }

    #[test]
    fn single_local_step_full_equals_leading() {
        // with H = 1 the noise term is the noise at theta*, so Sigma_t = Sigma_hat_t
        let (sys, model) = finite_fixture();
        let moments = noise_moments(&sys, &model, MomentMode::Exact).unwrap();
        let sched = Schedule::polynomial(0.3, 1, 0.6, 0.0).unwrap();
        for t in [1, 5, 40] {
            let full = sigma_t_full(&sys, &model, &sched, t).unwrap();
            let lead = sigma_hat_t(&sys, &moments, &sched, t).unwrap();
            assert!((full - lead).amax() < 1e-13);
        }
    }

    #[test]
    fn homogeneous_full_drops_heterogeneity_term() {
        let (sys, model) = finite_fixture();
        let one = build_federated_system(vec![sys.agents()[0].clone(); 2]).unwrap();
        let lists: Vec<Vec<(f64, FiniteOutcome)>> = (0..2)
            .map(|_| {
                (0..model.probabilities(0).len())
                    .map(|k| (model.probabilities(0)[k], model.outcome(0, k).clone()))
                    .collect()
            })
            .collect();
        let hom = FiniteModel::new(lists, one.theta_star_agents()).unwrap();
        let sched = Schedule::constant(0.1, 4).unwrap();
        let mut blocks = noise_blocks_exact(&one, &hom).unwrap();
        for b in &blocks {
            assert!(b.het_het.amax() < 1e-14 && b.eps_het.amax() < 1e-14);
        }
        let full = sigma_t_full(&one, &hom, &sched, 30).unwrap();
        for b in &mut blocks {
            b.eps_het.fill(0.0);
            b.het_het.fill(0.0);
        }
        let pure = sigma_t_series_from_blocks(&one, &blocks, &sched, &[30]).unwrap().remove(0);
        assert!((full - pure).amax() < 1e-14);
    }

    #[test]
    fn scalar_full_matches_brute_force() {
        // d = 1, one agent with two outcomes, t = 10, H = 3
        let a_vals = [0.6, 1.4];
        let b_vals = [0.2, 1.0];
        let lists = vec![vec![
            (0.5, FiniteOutcome::dense(scalar(a_vals[0]), Vector::from_element(1, b_vals[0]))),
            (0.5, FiniteOutcome::dense(scalar(a_vals[1]), Vector::from_element(1, b_vals[1]))),
        ]];
        let sys = build_federated_system(vec![AgentSystem::new(scalar(1.0), Vector::from_element(1, 0.6))]).unwrap();
        let model = FiniteModel::new(lists, sys.theta_star_agents()).unwrap();
        let sched = Schedule::polynomial(0.2, 3, 0.6, 0.0).unwrap();
        let t = 10;
        let theta = 0.6;
        let eps_sq = 0.5 * ((a_vals[0] - 1.0) * theta - (b_vals[0] - 0.6)).powi(2)
            + 0.5 * ((a_vals[1] - 1.0) * theta - (b_vals[1] - 0.6)).powi(2);
        let eta = |s: usize| 0.2 * (1.0 + s as f64).powf(-0.6);
        let mut total = 0.0;
        for s in 1..=t {
            let mut p = 1.0;
            for i in s + 1..=t {
                p *= (1.0 - eta(i)).powi(3);
            }
            for h in 1..=3 {
                let l = (1.0 - eta(s)).powi(3 - h);
                total += eta(s).powi(2) * p * p * l * l * eps_sq;
            }
        }
        total /= eta(t);
        let full = sigma_t_full(&sys, &model, &sched, t).unwrap()[(0, 0)];
        assert!((full - total).abs() < 1e-12, "{full} vs {total}");
    }

    #[test]
    fn series_matches_pointwise() {
        let (sys, model) = finite_fixture();
        let moments = noise_moments(&sys, &model, MomentMode::Exact).unwrap();
        let sched = Schedule::polynomial(0.3, 4, 0.6, 0.2).unwrap();
        let series = sigma_hat_series(&sys, &moments, &sched, &[3, 9, 9, 20]).unwrap();
        assert_eq!(series.len(), 4);
        assert_eq!(series[3], sigma_hat_t(&sys, &moments, &sched, 20).unwrap());
        assert!(sigma_hat_series(&sys, &moments, &sched, &[9, 3]).is_err());
        assert!(sigma_hat_series(&sys, &moments, &sched, &[0]).is_err());
    }

    #[test]
    fn sigma_hat_is_psd() {
        let (sys, model) = finite_fixture();
        let moments = noise_moments(&sys, &model, MomentMode::Exact).unwrap();
        let sched = Schedule::polynomial(0.5, 5, 0.6, 0.1).unwrap();
        for s in sigma_hat_series(&sys, &moments, &sched, &[1, 10, 100, 1000]).unwrap() {
            assert!(s.symmetric_eigenvalues().min() >= -1e-12);
        }
    }

    #[test]
    fn automatic_mode_prefers_enumeration() {
        let (sys, model) = finite_fixture();
        let sched = Schedule::constant(0.1, 2).unwrap();
        let est = sigma_t(&sys, &model, &sched, 10, 1000, 10, 1).unwrap();
        assert_eq!(est.mode, SigmaTMode::Exact);
        assert!(est.std_err.is_none());
    }

    #[test]
    fn monte_carlo_mode_reports_errors() {
        let (sys, _) = finite_fixture();
        let model = crate::engine::observation::UniformNoiseModel::new(&sys, 0.1).unwrap();
        let sched = Schedule::constant(0.1, 2).unwrap();
        let est = sigma_t(&sys, &model, &sched, 10, 20_000, 10, 1).unwrap();
        assert!(matches!(est.mode, SigmaTMode::MonteCarlo { .. }));
        let se = est.std_err.unwrap();
        assert!(se.amax() > 0.0 && se.amax() < 0.1 * est.value.amax());
        assert!(matches!(sigma_t_full(&sys, &model, &sched, 10), Err(Error::NotEnumerable)));
    }

    #[test]
    fn plugin_without_noise() {
        let (sys, _) = finite_fixture();
        let mut acc = PluginAccumulator::new(2, 2);
        acc.h_bar = 3;
        for c in 0..2 {
            for _ in 0..3 {
                acc.a_sum += &sys.agents()[c].a_bar;
            }
        }
        let s = plugin_sigma_infinity(&acc, PluginVariant::Observable).unwrap();
        assert_eq!(s, Mat::zeros(2, 2));
        assert!((&acc.a_sum / 6.0 - sys.a_avg()).amax() < 1e-14);
        assert!(plugin_sigma_infinity(&PluginAccumulator::new(2, 2), PluginVariant::Observable).is_err());
    }

    #[test]
    fn covariance_set_round_trip() {
        let (sys, model) = finite_fixture();
        let moments = noise_moments(&sys, &model, MomentMode::Exact).unwrap();
        let sched = Schedule::constant(0.1, 2).unwrap();
        let set = CovarianceSet::compute(&sys, &moments, &sched, 50, Some(&model)).unwrap();
        assert!(set.sigma_t.is_some());
        for m in [&set.sigma_inf, &set.sigma_hat_t, set.sigma_t.as_ref().unwrap()] {
            assert!(crate::linalg::max_asymmetry(m) <= 1e-10);
        }
        let json = serde_json::to_string(&set).unwrap();
        let back: CovarianceSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back.t, 50);
        assert!((back.sigma_inf - &set.sigma_inf).amax() < 1e-15);
        let none = CovarianceSet::compute::<FiniteModel>(&sys, &moments, &sched, 50, None).unwrap();
        assert!(none.sigma_t.is_none());
    }
}
