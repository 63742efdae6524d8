//! The FedLSA recursion and its multiplier-bootstrap replay.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::observation::ObservationModel;
use super::stream::{NoiseStreamKey, WeightKeyPrefix};
use super::weights::WeightDistribution;
use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::model::FederatedSystem;
use crate::schedule::Schedule;

/// Iterates whose norm exceeds this are treated as diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

/// Who consumed a draw: the base run or bootstrap replicate `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Consumer {
    Base,
    Replicate(usize),
}

/// Receives every data draw consumed by a run. Used in tests to assert that
/// bootstrap replicates are coupled to the base run.
pub trait DrawObserver {
    const ENABLED: bool;
    fn on_draw(&mut self, consumer: Consumer, key: &NoiseStreamKey, fingerprint: u64);
}

pub struct NoObserver;

impl DrawObserver for NoObserver {
    const ENABLED: bool = false;
    #[inline(always)]
    fn on_draw(&mut self, _: Consumer, _: &NoiseStreamKey, _: u64) {}
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrawRecord {
    pub consumer: Consumer,
    pub key: NoiseStreamKey,
    pub fingerprint: u64,
}

#[derive(Debug, Clone, Default)]
pub struct DrawLog {
    pub records: Vec<DrawRecord>,
}

impl DrawObserver for DrawLog {
    const ENABLED: bool = true;
    fn on_draw(&mut self, consumer: Consumer, key: &NoiseStreamKey, fingerprint: u64) {
        self.records.push(DrawRecord {
            consumer,
            key: *key,
            fingerprint,
        });
    }
}

impl DrawLog {
    /// Draws consumed by one consumer, in consumption order.
    pub fn for_consumer(&self, consumer: Consumer) -> Vec<(NoiseStreamKey, u64)> {
        self.records
            .iter()
            .filter(|r| r.consumer == consumer)
            .map(|r| (r.key, r.fingerprint))
            .collect()
    }

    /// CSV with columns `consumer,seed,round,step,agent,fingerprint`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "consumer,seed,round,step,agent,fingerprint")?;
        for r in &self.records {
            let who = match r.consumer {
                Consumer::Base => "base".to_string(),
                Consumer::Replicate(b) => format!("b{b}"),
            };
            writeln!(
                w,
                "{who},{},{},{},{},{:016x}",
                r.key.seed, r.key.round, r.key.step, r.key.agent, r.fingerprint
            )?;
        }
        Ok(())
    }
}

/// Recorded global iterates of one FedLSA run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `theta_0 ..= theta_T`, or up to the last finite iterate on divergence.
    #[serde(with = "crate::linalg::flat::list")]
    pub theta: Vec<Vector>,
    pub schedule: Schedule,
    pub seed: u64,
    /// Round at which the iterate left the finite/bounded region.
    pub diverged_at: Option<usize>,
}

impl Trajectory {
    pub fn is_diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    pub fn last(&self) -> &Vector {
        self.theta.last().expect("trajectory holds theta_0")
    }

    /// CSV with columns `t,theta_0,..,theta_{d-1}`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let d = self.theta.first().map_or(0, Vector::len);
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((0..d).map(|i| format!("theta_{i}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for (t, th) in self.theta.iter().enumerate() {
            write!(w, "{t}")?;
            for x in th.iter() {
                write!(w, ",{x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Running sums for the plug-in covariance estimator: over all rounds `s`,
/// local steps `h` and agents `c`, the outer products of
/// `A(Z) theta_{s-1} - b(Z)` (observable) and of its mean-centered version,
/// and the sum of `A(Z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PluginAccumulator {
    pub eps_outer: Mat,
    pub eps_outer_centered: Mat,
    pub a_sum: Mat,
    /// `H_bar_t = sum_{s <= t} H_s`.
    pub h_bar: usize,
    pub n_agents: usize,
}

impl PluginAccumulator {
    pub fn new(dim: usize, n_agents: usize) -> Self {
        PluginAccumulator {
            eps_outer: Mat::zeros(dim, dim),
            eps_outer_centered: Mat::zeros(dim, dim),
            a_sum: Mat::zeros(dim, dim),
            h_bar: 0,
            n_agents,
        }
    }
}

/// State captured at a requested round.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub round: usize,
    pub eta: f64,
    pub theta: Vector,
    /// Replicate iterates; `None` for replicates that diverged before here.
    pub replicates: Vec<Option<Vector>>,
    pub plugin: Option<PluginAccumulator>,
}

impl Checkpoint {
    pub fn finite_replicates(&self) -> Vec<Vector> {
        self.replicates.iter().flatten().cloned().collect()
    }

    pub fn dropped_replicates(&self) -> usize {
        self.replicates.iter().filter(|r| r.is_none()).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSpec {
    pub n_replicates: usize,
    pub weight_seed: u64,
    pub weights: WeightDistribution,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Keep every global iterate (otherwise only `theta_0` and the last).
    pub record_path: bool,
    /// Keep every replicate's global iterates as well.
    pub record_replicate_paths: bool,
    /// Rounds at which to capture a [`Checkpoint`], ascending.
    pub checkpoints: Vec<usize>,
    /// Accumulate plug-in covariance sums on the base run.
    pub plugin: bool,
    pub bootstrap: Option<BootstrapSpec>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trajectory: Trajectory,
    pub checkpoints: Vec<Checkpoint>,
    pub replicate_finals: Vec<Option<Vector>>,
    pub replicate_diverged_at: Vec<Option<usize>>,
    pub replicate_paths: Option<Vec<Vec<Vector>>>,
    pub plugin: Option<PluginAccumulator>,
}

/// Inputs of one FedLSA run.
#[derive(Debug, Clone)]
pub struct FedLsa<'a, M> {
    pub system: &'a FederatedSystem,
    pub model: &'a M,
    pub schedule: Schedule,
    pub rounds: usize,
    pub theta0: Vector,
    pub seed: u64,
}

/// Runs Algorithm FedLSA and returns every global iterate.
pub fn run_fedlsa<M: ObservationModel>(
    sys: &FederatedSystem,
    model: &M,
    schedule: Schedule,
    rounds: usize,
    theta0: &Vector,
    seed: u64,
) -> Result<Trajectory> {
    let run = FedLsa {
        system: sys,
        model,
        schedule,
        rounds,
        theta0: theta0.clone(),
        seed,
    };
    let opts = RunOptions {
        record_path: true,
        ..Default::default()
    };
    Ok(run.simulate(&opts, &mut NoObserver)?.trajectory)
}

/// Result of a bootstrap replay: the base run plus `N_b` weighted replicates
/// that consumed exactly the base run's data draws.
#[derive(Debug, Clone)]
pub struct BootstrapEnsemble {
    pub base: Trajectory,
    pub replicate_finals: Vec<Option<Vector>>,
    pub replicate_diverged_at: Vec<Option<usize>>,
    pub replicate_paths: Option<Vec<Vec<Vector>>>,
    pub weights: WeightDistribution,
    pub w_min: f64,
    pub w_max: f64,
}

impl BootstrapEnsemble {
    pub fn finite_finals(&self) -> Vec<Vector> {
        self.replicate_finals.iter().flatten().cloned().collect()
    }

    pub fn n_dropped(&self) -> usize {
        self.replicate_finals.iter().filter(|r| r.is_none()).count()
    }
}

pub fn run_bootstrap_ensemble<M: ObservationModel>(
    run: &FedLsa<'_, M>,
    spec: BootstrapSpec,
    record_paths: bool,
) -> Result<BootstrapEnsemble> {
    let opts = RunOptions {
        record_path: true,
        record_replicate_paths: record_paths,
        bootstrap: Some(spec),
        ..Default::default()
    };
    let out = run.simulate(&opts, &mut NoObserver)?;
    let (w_min, w_max) = spec.weights.support();
    Ok(BootstrapEnsemble {
        base: out.trajectory,
        replicate_finals: out.replicate_finals,
        replicate_diverged_at: out.replicate_diverged_at,
        replicate_paths: out.replicate_paths,
        weights: spec.weights,
        w_min,
        w_max,
    })
}

#[inline]
fn escaped(theta: &[f64]) -> bool {
    let sq: f64 = theta.iter().map(|x| x * x).sum();
    !(sq.sqrt() <= DIVERGENCE_THRESHOLD)
}

impl<M: ObservationModel> FedLsa<'_, M> {
    fn validate(&self) -> Result<()> {
        let d = self.system.dim();
        if self.rounds < 1 {
            return Err(Error::InvalidRange { from: 1, to: self.rounds });
        }
        if self.theta0.len() != d {
            return Err(Error::DimensionMismatch {
                what: "theta0",
                expected: d,
                found: self.theta0.len(),
            });
        }
        if self.model.dim() != d || self.model.n_agents() != self.system.n_agents() {
            return Err(Error::DimensionMismatch {
                what: "observation model agents",
                expected: self.system.n_agents(),
                found: self.model.n_agents(),
            });
        }
        Ok(())
    }

    /// General driver: base run, optional bootstrap replicates sharing its
    /// data stream, checkpoints and plug-in sums.
    ///
    /// Agents are processed in ascending order and averaged with a fixed
    /// summation order, so the output is bitwise reproducible.
    pub fn simulate<O: DrawObserver>(&self, opts: &RunOptions, observer: &mut O) -> Result<RunOutput> {
        self.validate()?;
        let d = self.system.dim();
        let n = self.system.n_agents();
        let inv_n = 1.0 / n as f64;
        let model = self.model;
        let (n_b, weight_seed, weights) = match opts.bootstrap {
            Some(b) => (b.n_replicates, b.weight_seed, b.weights),
            None => (0, 0, WeightDistribution::Unit),
        };

        let mut global = self.theta0.as_slice().to_vec();
        let mut path = vec![self.theta0.clone()];
        let mut local = vec![0.0; d];
        let mut next = vec![0.0; d];
        let mut scratch = vec![0.0; d];

        let mut rep_global = vec![0.0; n_b * d];
        for b in 0..n_b {
            rep_global[b * d..(b + 1) * d].copy_from_slice(&global);
        }
        let mut rep_local = vec![0.0; n_b * d];
        let mut rep_next = vec![0.0; n_b * d];
        let mut alive: Vec<usize> = (0..n_b).collect();
        let mut steps: Vec<f64> = Vec::with_capacity(n_b);
        let mut rep_diverged = vec![None; n_b];
        let mut rep_paths = opts
            .record_replicate_paths
            .then(|| vec![vec![self.theta0.clone()]; n_b]);

        let mut plugin = opts.plugin.then(|| PluginAccumulator::new(d, n));
        let mut centered = vec![0.0; d];
        let mut eps = vec![0.0; d];
        let mut a_sum_scratch = Mat::zeros(d, d);

        let mut checkpoints = Vec::with_capacity(opts.checkpoints.len());
        let mut next_checkpoint = opts.checkpoints.iter().copied().peekable();
        let mut diverged_at = None;

        for t in 1..=self.rounds {
            let eta = self.schedule.step_size_unchecked(t);
            let h_t = self.schedule.local_steps_unchecked(t);
            next.iter_mut().for_each(|x| *x = 0.0);
            rep_next.iter_mut().for_each(|x| *x = 0.0);
            if let Some(p) = plugin.as_mut() {
                p.h_bar += h_t;
            }

            for c in 0..n {
                local.copy_from_slice(&global);
                for &b in &alive {
                    rep_local[b * d..(b + 1) * d].copy_from_slice(&rep_global[b * d..(b + 1) * d]);
                }
                if plugin.is_some() {
                    // Abar^c theta_{t-1} - bbar^c, subtracted for the centered variant
                    let agent = &self.system.agents()[c];
                    for i in 0..d {
                        let mut acc = -agent.b_bar[i];
                        for j in 0..d {
                            acc += agent.a_bar[(i, j)] * global[j];
                        }
                        centered[i] = acc;
                    }
                }
                for h in 1..=h_t {
                    let key = NoiseStreamKey::data(self.seed, t, h, c);
                    let mut stream = key.stream();
                    let fingerprint = if O::ENABLED { stream.fingerprint() } else { 0 };
                    let sample = model.draw(c, &mut stream);
                    if O::ENABLED {
                        observer.on_draw(Consumer::Base, &key, fingerprint);
                    }

                    model.residual(c, &sample, &local, &mut scratch);
                    for i in 0..d {
                        local[i] -= eta * scratch[i];
                    }

                    if let Some(p) = plugin.as_mut() {
                        model.residual(c, &sample, &global, &mut eps);
                        for j in 0..d {
                            for i in 0..d {
                                p.eps_outer[(i, j)] += eps[i] * eps[j];
                                let (ci, cj) = (eps[i] - centered[i], eps[j] - centered[j]);
                                p.eps_outer_centered[(i, j)] += ci * cj;
                            }
                        }
                        model.add_sample_matrix(c, &sample, &mut a_sum_scratch);
                    }

                    if !alive.is_empty() {
                        let prefix = WeightKeyPrefix::new(weight_seed, t, h, c);
                        steps.clear();
                        steps.extend(alive.iter().map(|&b| eta * weights.sample_prefixed(prefix, b)));
                        model.weighted_steps(c, &sample, &mut rep_local, &alive, &steps, &mut scratch);
                        if O::ENABLED {
                            for &b in &alive {
                                observer.on_draw(Consumer::Replicate(b), &key, fingerprint);
                            }
                        }
                    }
                }
                for i in 0..d {
                    next[i] += local[i];
                }
                for &b in &alive {
                    for i in 0..d {
                        rep_next[b * d + i] += rep_local[b * d + i];
                    }
                }
            }

            for i in 0..d {
                global[i] = next[i] * inv_n;
            }
            if escaped(&global) {
                diverged_at = Some(t);
                break;
            }
            alive.retain(|&b| {
                let th = &mut rep_global[b * d..(b + 1) * d];
                for i in 0..d {
                    th[i] = rep_next[b * d + i] * inv_n;
                }
                if escaped(th) {
                    rep_diverged[b] = Some(t);
                    false
                } else {
                    true
                }
            });
            if opts.record_path || t == self.rounds {
                path.push(Vector::from_column_slice(&global));
            }
            if let Some(paths) = rep_paths.as_mut() {
                for &b in &alive {
                    paths[b].push(Vector::from_column_slice(&rep_global[b * d..(b + 1) * d]));
                }
            }
            if let Some(p) = plugin.as_mut() {
                p.a_sum += &a_sum_scratch;
                a_sum_scratch.fill(0.0);
            }
            while next_checkpoint.peek().is_some_and(|&r| r < t) {
                next_checkpoint.next();
            }
            if next_checkpoint.peek() == Some(&t) {
                next_checkpoint.next();
                checkpoints.push(Checkpoint {
                    round: t,
                    eta,
                    theta: Vector::from_column_slice(&global),
                    replicates: (0..n_b)
                        .map(|b| {
                            rep_diverged[b]
                                .is_none()
                                .then(|| Vector::from_column_slice(&rep_global[b * d..(b + 1) * d]))
                        })
                        .collect(),
                    plugin: plugin.clone(),
                });
            }
        }

        let replicate_finals = if diverged_at.is_some() {
            vec![None; n_b]
        } else {
            (0..n_b)
                .map(|b| {
                    rep_diverged[b]
                        .is_none()
                        .then(|| Vector::from_column_slice(&rep_global[b * d..(b + 1) * d]))
                })
                .collect()
        };
        Ok(RunOutput {
            trajectory: Trajectory {
                theta: path,
                schedule: self.schedule,
                seed: self.seed,
                diverged_at,
            },
            checkpoints,
            replicate_finals,
            replicate_diverged_at: rep_diverged,
            replicate_paths: rep_paths,
            plugin,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::observation::{FiniteModel, FiniteOutcome, UniformNoiseModel};
    use crate::model::{build_federated_system, AgentSystem};

    fn scalar_sys(a: f64, b: f64) -> FederatedSystem {
        build_federated_system(vec![AgentSystem::new(
            Mat::from_element(1, 1, a),
            Vector::from_element(1, b),
        )])
        .unwrap()
    }

    fn noisy_pair() -> (FederatedSystem, FiniteModel) {
        let o = |a: [f64; 4], b: [f64; 2]| {
            FiniteOutcome::dense(Mat::from_row_slice(2, 2, &a), Vector::from_column_slice(&b))
        };
        let lists = vec![
            vec![
                (0.5, o([1.5, 0.2, 0.0, 0.7], [1.0, 0.0])),
                (0.5, o([0.5, -0.2, 0.2, 1.3], [0.0, 1.0])),
            ],
            vec![
                (0.3, o([2.0, 0.0, 0.1, 1.0], [0.5, 0.5])),
                (0.7, o([1.0, 0.1, 0.0, 1.2], [-0.5, 0.2])),
            ],
        ];
        let agents = lists
            .iter()
            .map(|l| {
                let a = l.iter().fold(Mat::zeros(2, 2), |acc, (p, x)| acc + &x.a * *p);
                let b = l.iter().fold(Vector::zeros(2), |acc, (p, x)| acc + &x.b * *p);
                AgentSystem::new(a, b)
            })
            .collect();
        let sys = build_federated_system(agents).unwrap();
        let model = FiniteModel::new(lists, sys.theta_star_agents()).unwrap();
        (sys, model)
    }

    #[test]
    fn hand_iteration() {
        let sys = scalar_sys(1.0, 1.0);
        let model = FiniteModel::deterministic(&sys);
        let sched = Schedule::constant(0.5, 1).unwrap();
        let tr = run_fedlsa(&sys, &model, sched, 3, &Vector::zeros(1), 0).unwrap();
        let xs: Vec<f64> = tr.theta.iter().map(|v| v[0]).collect();
        assert_eq!(xs, vec![0.0, 0.5, 0.75, 0.875]);
        assert!(!tr.is_diverged());
    }

    #[test]
    fn fixed_point_is_kept() {
        let (sys, _) = noisy_pair();
        let model = FiniteModel::deterministic(&sys);
        // one local step: the averaged update is the global mean update
        let sched = Schedule::polynomial(0.3, 1, 0.6, 0.0).unwrap();
        let tr = run_fedlsa(&sys, &model, sched, 50, sys.theta_star(), 1).unwrap();
        for th in &tr.theta {
            assert!((th - sys.theta_star()).amax() < 1e-12);
        }
    }

    #[test]
    fn homogeneous_pair_matches_single_agent() {
        let one = scalar_sys(0.8, 0.4);
        let two = build_federated_system(vec![one.agents()[0].clone(); 2]).unwrap();
        let sched = Schedule::constant(0.2, 3).unwrap();
        let x0 = Vector::from_element(1, -1.0);
        let a = run_fedlsa(&one, &FiniteModel::deterministic(&one), sched, 20, &x0, 5).unwrap();
        let b = run_fedlsa(&two, &FiniteModel::deterministic(&two), sched, 20, &x0, 5).unwrap();
        assert_eq!(a.theta, b.theta);
    }

    #[test]
    fn deterministic_contraction_is_monotone() {
        let (sys, _) = noisy_pair();
        let model = FiniteModel::deterministic(&sys);
        let eta = 0.9 / crate::linalg::spectral_norm(sys.a_avg());
        let sched = Schedule::constant(eta, 1).unwrap();
        let tr = run_fedlsa(&sys, &model, sched, 200, &Vector::from_vec(vec![3.0, -2.0]), 0).unwrap();
        let errs: Vec<f64> = tr.theta.iter().map(|t| (t - sys.theta_star()).norm()).collect();
        assert!(errs.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    }

    #[test]
    fn replay_is_deterministic_and_seed_sensitive() {
        let (sys, model) = noisy_pair();
        let sched = Schedule::constant(0.1, 2).unwrap();
        let x0 = Vector::zeros(2);
        let a = run_fedlsa(&sys, &model, sched, 100, &x0, 7).unwrap();
        let b = run_fedlsa(&sys, &model, sched, 100, &x0, 7).unwrap();
        let c = run_fedlsa(&sys, &model, sched, 100, &x0, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.last(), c.last());
    }

    #[test]
    fn unit_weights_reproduce_base_bitwise() {
        let (sys, model) = noisy_pair();
        let run = FedLsa {
            system: &sys,
            model: &model,
            schedule: Schedule::polynomial(0.4, 3, 0.6, 0.0).unwrap(),
            rounds: 60,
            theta0: Vector::from_vec(vec![0.5, -0.5]),
            seed: 11,
        };
        let spec = BootstrapSpec {
            n_replicates: 5,
            weight_seed: 3,
            weights: WeightDistribution::Unit,
        };
        let ens = run_bootstrap_ensemble(&run, spec, true).unwrap();
        for path in ens.replicate_paths.as_ref().unwrap() {
            assert_eq!(path, &ens.base.theta);
        }
        for fin in &ens.replicate_finals {
            assert_eq!(fin.as_ref().unwrap(), ens.base.last());
        }
        assert_eq!((ens.w_min, ens.w_max), (1.0, 1.0));
    }

    #[test]
    fn replicates_consume_the_base_draws() {
        let (sys, model) = noisy_pair();
        let run = FedLsa {
            system: &sys,
            model: &model,
            schedule: Schedule::constant(0.1, 3).unwrap(),
            rounds: 8,
            theta0: Vector::zeros(2),
            seed: 4,
        };
        let opts = RunOptions {
            bootstrap: Some(BootstrapSpec {
                n_replicates: 3,
                weight_seed: 9,
                weights: WeightDistribution::NormalizedBeta,
            }),
            ..Default::default()
        };
        let mut log = DrawLog::default();
        let out = run.simulate(&opts, &mut log).unwrap();
        let base = log.for_consumer(Consumer::Base);
        assert_eq!(base.len(), 8 * 3 * 2);
        for b in 0..3 {
            assert_eq!(log.for_consumer(Consumer::Replicate(b)), base);
        }
        // weights differ, so replicates leave the base path
        assert_ne!(out.replicate_finals[0].as_ref().unwrap(), out.trajectory.last());
        let mut csv = Vec::new();
        log.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 1 + 4 * 48);
    }

    #[test]
    fn divergence_truncates() {
        let sys = scalar_sys(1.0, 1.0);
        let model = FiniteModel::deterministic(&sys);
        // |1 - eta| = 2 doubles the error every round
        let sched = Schedule::constant(3.0, 1).unwrap();
        let tr = run_fedlsa(&sys, &model, sched, 100, &Vector::zeros(1), 0).unwrap();
        let at = tr.diverged_at.unwrap();
        assert_eq!(tr.theta.len(), at);
        assert!(tr.theta.iter().all(|t| t[0].is_finite()));
    }

    #[test]
    fn divergent_replicates_are_flagged() {
        let sys = scalar_sys(1.0, 1.0);
        let model = FiniteModel::deterministic(&sys);
        let run = FedLsa {
            system: &sys,
            model: &model,
            schedule: Schedule::constant(1.2, 1).unwrap(),
            rounds: 400,
            theta0: Vector::zeros(1),
            seed: 0,
        };
        // weight 2 gives |1 - 2.4| > 1, weight 0 freezes; the mix diverges for most replicates
        let spec = BootstrapSpec {
            n_replicates: 20,
            weight_seed: 1,
            weights: WeightDistribution::TwoPoint,
        };
        let ens = run_bootstrap_ensemble(&run, spec, false).unwrap();
        assert!(!ens.base.is_diverged());
        assert!(ens.n_dropped() > 0);
        assert_eq!(ens.finite_finals().len() + ens.n_dropped(), 20);
        for (fin, at) in ens.replicate_finals.iter().zip(&ens.replicate_diverged_at) {
            assert_eq!(fin.is_none(), at.is_some());
        }
    }

    #[test]
    fn plugin_sums_and_checkpoints() {
        let (sys, _) = noisy_pair();
        let model = FiniteModel::deterministic(&sys);
        let run = FedLsa {
            system: &sys,
            model: &model,
            schedule: Schedule::polynomial(0.3, 2, 0.6, 0.2).unwrap(),
            rounds: 30,
            theta0: sys.theta_star().clone(),
            seed: 0,
        };
        let opts = RunOptions {
            plugin: true,
            checkpoints: vec![10, 30],
            ..Default::default()
        };
        let out = run.simulate(&opts, &mut NoObserver).unwrap();
        assert_eq!(out.checkpoints.len(), 2);
        assert_eq!(out.checkpoints[0].round, 10);
        let p = out.plugin.unwrap();
        let h_bar: usize = (1..=30).map(|t| run.schedule.local_steps(t).unwrap()).sum();
        assert_eq!(p.h_bar, h_bar);
        let a_t = &p.a_sum / (2 * h_bar) as f64;
        assert!((a_t - sys.a_avg()).amax() < 1e-12);
        // at theta* each agent's observable residual is its own mean residual
        assert!(p.eps_outer_centered.amax() < 1e-20);
        let cp = &out.checkpoints[0];
        assert_eq!(cp.plugin.as_ref().unwrap().h_bar, (1..=10).map(|t| run.schedule.local_steps(t).unwrap()).sum::<usize>());
    }

    #[test]
    fn continuous_model_runs() {
        let (sys, _) = noisy_pair();
        let model = UniformNoiseModel::new(&sys, 0.2).unwrap();
        let sched = Schedule::constant(0.05, 2).unwrap();
        let tr = run_fedlsa(&sys, &model, sched, 2000, &Vector::zeros(2), 3).unwrap();
        assert!((tr.last() - sys.theta_star()).norm() < 0.5);
    }

    #[test]
    fn trajectory_csv() {
        let sys = scalar_sys(1.0, 1.0);
        let model = FiniteModel::deterministic(&sys);
        let tr = run_fedlsa(&sys, &model, Schedule::constant(0.5, 1).unwrap(), 2, &Vector::zeros(1), 0).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,theta_0\n0,0\n1,0.5\n2,0.75\n");
    }
}
