//! Deterministic bias terms, Monte-Carlo moments and rate fits.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::averaged_contraction;
use crate::engine::observation::ObservationModel;
use crate::engine::run::{FedLsa, RunOptions};
use crate::engine::stream::derive_seed;
use crate::engine::NoObserver;
use crate::error::{Error, Result};
use crate::linalg::{mat_pow, spectral_norm, Mat, Vector};
use crate::model::FederatedSystem;
use crate::schedule::Schedule;

const LABEL_MC: u64 = 0x6d63_6d6f;

/// `G_avg_t = N^-1 sum_c (I - eta_t Abar^c)^{H_t}`.
pub fn deterministic_contraction(sys: &FederatedSystem, sched: &Schedule, t: usize) -> Result<Mat> {
    let eta = sched.step_size(t)?;
    let h = sched.local_steps(t)?;
    Ok(averaged_contraction(sys, eta, h))
}

/// `rho_avg_t = N^-1 sum_c (I - G_t^c)(theta*^c - theta*)` with
/// `G_t^c = (I - eta_t Abar^c)^{H_t}`.
pub fn rho_avg(sys: &FederatedSystem, sched: &Schedule, t: usize) -> Result<Vector> {
    let eta = sched.step_size(t)?;
    let h = sched.local_steps(t)?;
    Ok(rho_avg_at(sys, eta, h))
}

fn rho_avg_at(sys: &FederatedSystem, eta: f64, h: usize) -> Vector {
    let d = sys.dim();
    let eye = Mat::identity(d, d);
    let mut acc = Vector::zeros(d);
    for (agent, star_c) in sys.agents().iter().zip(sys.theta_star_agents()) {
        let g = mat_pow(&(&eye - &agent.a_bar * eta), h);
        acc += (&eye - g) * (star_c - sys.theta_star());
    }
    acc / sys.n_agents() as f64
}

/// `theta_bibi_t` for `t = 0..=rounds` by `x_t = G_avg_t x_{t-1} + rho_avg_t`, `x_0 = 0`.
pub fn bias_trajectory(sys: &FederatedSystem, sched: &Schedule, rounds: usize) -> Result<Vec<Vector>> {
    if rounds < 1 {
        return Err(Error::InvalidRound(rounds));
    }
    let mut out = Vec::with_capacity(rounds + 1);
    let mut x = Vector::zeros(sys.dim());
    out.push(x.clone());
    for t in 1..=rounds {
        let eta = sched.step_size(t)?;
        let h = sched.local_steps(t)?;
        x = averaged_contraction(sys, eta, h) * x + rho_avg_at(sys, eta, h);
        out.push(x.clone());
    }
    Ok(out)
}

/// `zeta1 zeta2 sum_{s<=t} eta_s^2 H_s^2 exp(-a sum_{s<i<=t} eta_i H_i)` for
/// `t = 0..=rounds`.
pub fn bias_bound_series(sched: &Schedule, rounds: usize, a: f64, zeta1: f64, zeta2: f64) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(rounds + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for t in 1..=rounds {
        let eh = sched.step_size(t)? * sched.local_steps(t)? as f64;
        acc = (-a * eh).exp() * acc + eh * eh;
        out.push(zeta1 * zeta2 * acc);
    }
    Ok(out)
}

/// Outcome of comparing [`bias_trajectory`] with [`bias_bound_series`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasBoundCheck {
    pub rounds: usize,
    pub contraction: f64,
    /// `||G_avg_t|| <= exp(-a eta_t H_t)` at every round, which makes the
    /// bound a theorem rather than a heuristic for this system.
    pub certified: bool,
    pub violations: usize,
    /// Largest `||theta_bibi_t|| / bound_t` over rounds with a positive bound.
    pub max_ratio: f64,
}

impl BiasBoundCheck {
    /// Fails only when the contraction rate is certified.
    pub fn passed(&self) -> bool {
        !self.certified || self.violations == 0
    }
}

pub fn check_bias_bound(sys: &FederatedSystem, sched: &Schedule, rounds: usize, a: f64, zeta1: f64, zeta2: f64) -> Result<BiasBoundCheck> {
    let traj = bias_trajectory(sys, sched, rounds)?;
    let bound = bias_bound_series(sched, rounds, a, zeta1, zeta2)?;
    let mut certified = true;
    for t in 1..=rounds {
        let g = deterministic_contraction(sys, sched, t)?;
        let eh = sched.step_size(t)? * sched.local_steps(t)? as f64;
        if spectral_norm(&g) > (-a * eh).exp() * (1.0 + 1e-12) {
            certified = false;
            break;
        }
    }
    let mut violations = 0;
    let mut max_ratio: f64 = 0.0;
    for (x, b) in traj.iter().zip(&bound).skip(1) {
        let n = x.norm();
        if n > b * (1.0 + 1e-12) + 1e-300 {
            violations += 1;
        }
        if *b > 0.0 {
            max_ratio = max_ratio.max(n / b);
        }
    }
    Ok(BiasBoundCheck {
        rounds,
        contraction: a,
        certified,
        violations,
        max_ratio,
    })
}

/// Monte-Carlo estimate of `E^{1/p} ||theta_T - theta*||^p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub t: usize,
    pub value: f64,
    /// Jackknife standard error.
    pub std_err: f64,
    /// Runs that diverged before round `t` and are left out.
    pub n_diverged: usize,
    pub n_runs: usize,
}

/// [`mc_moment_series`] at a single round.
#[allow(clippy::too_many_arguments)]
pub fn mc_moment<M: ObservationModel + Sync>(
    sys: &FederatedSystem,
    model: &M,
    sched: Schedule,
    t: usize,
    p: f64,
    n_runs: usize,
    theta0: &Vector,
    seed: u64,
) -> Result<MomentEstimate> {
    Ok(mc_moment_series(sys, model, sched, &[t], p, n_runs, theta0, seed)?.remove(0))
}

/// Moments at every requested round (ascending) from `n_runs` independent
/// trajectories; run `r` uses seed `derive_seed(seed, _, r)`.
///
/// Runs are spread over the rayon pool and reduced in run order, so the
/// result does not depend on the number of threads.
#[allow(clippy::too_many_arguments)]
pub fn mc_moment_series<M: ObservationModel + Sync>(
    sys: &FederatedSystem,
    model: &M,
    sched: Schedule,
    rounds: &[usize],
    p: f64,
    n_runs: usize,
    theta0: &Vector,
    seed: u64,
) -> Result<Vec<MomentEstimate>> {
    if n_runs < 2 {
        return Err(Error::TooFewPoints { needed: 2, found: n_runs });
    }
    if !(p >= 1.0) {
        return Err(Error::InvalidArgument(format!("moment order p = {p} must be >= 1")));
    }
    if rounds.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(&t) = rounds.iter().find(|&&t| t < 1) {
        return Err(Error::InvalidRound(t));
    }
    if rounds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("rounds must be strictly ascending".into()));
    }
    let last = *rounds.last().expect("nonempty");
    let star = sys.theta_star();
    let opts = RunOptions {
        checkpoints: rounds.to_vec(),
        ..Default::default()
    };
    // errs[r][k] = ||theta_{rounds[k]} - theta*||^p, None once diverged
    let errs: Vec<Vec<Option<f64>>> = (0..n_runs)
        .into_par_iter()
        .map(|r| {
            let run = FedLsa {
                system: sys,
                model,
                schedule: sched,
                rounds: last,
                theta0: theta0.clone(),
                seed: derive_seed(seed, LABEL_MC, r as u64),
            };
            let out = run.simulate(&opts, &mut NoObserver)?;
            let mut row = vec![None; rounds.len()];
            for cp in &out.checkpoints {
                let k = rounds.binary_search(&cp.round).expect("requested checkpoint");
                row[k] = Some((&cp.theta - star).norm().powf(p));
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;

    rounds
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let xs: Vec<f64> = errs.iter().filter_map(|row| row[k]).collect();
            let n_diverged = n_runs - xs.len();
            let (value, std_err) = jackknife_root_moment(&xs, p);
            Ok(MomentEstimate {
                t,
                value,
                std_err,
                n_diverged,
                n_runs,
            })
        })
        .collect()
}

/// `(mean x)^{1/p}` and its jackknife standard error.
fn jackknife_root_moment(xs: &[f64], p: f64) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let sum: f64 = xs.iter().sum();
    let value = (sum / n as f64).powf(1.0 / p);
    if n < 2 {
        return (value, f64::NAN);
    }
    let loo: Vec<f64> = xs
        .iter()
        .map(|x| ((sum - x) / (n - 1) as f64).max(0.0).powf(1.0 / p))
        .collect();
    let mean = loo.iter().sum::<f64>() / n as f64;
    let var = loo.iter().map(|v| (v - mean).powi(2)).sum::<f64>() * (n - 1) as f64 / n as f64;
    (value, var.sqrt())
}

/// Least-squares line through `(log t, log value)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: Vec<(f64, f64)>,
}

pub fn rate_fit(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(Error::TooFewPoints {
            needed: 3,
            found: points.len(),
        });
    }
    let mut logs = Vec::with_capacity(points.len());
    for &(t, v) in points {
        if !(v > 0.0) {
            return Err(Error::NonPositiveValue(v));
        }
        if !(t > 0.0) {
            return Err(Error::NonPositiveValue(t));
        }
        logs.push((t.ln(), v.ln()));
    }
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = logs.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("rate fit needs at least two distinct t".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = logs.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r2 = if syy <= f64::EPSILON * f64::EPSILON * n {
        1.0
    } else {
        (1.0 - sse / syy).clamp(0.0, 1.0)
    };
    Ok(RateFit {
        slope,
        intercept,
        r2,
        points: logs,
    })
}

/// `value ~ c1 t^e1 + c2 t^e2` with `e1 <= e2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoTermFit {
    pub exponents: [f64; 2],
    pub coefficients: [f64; 2],
    /// Root mean square of the relative residuals.
    pub rel_rms: f64,
}

/// Fits two power laws with free exponents.
///
/// Exponent pairs on a grid of `step` over `[lo, hi]` are scored by the
/// relative least-squares residual with the coefficients solved exactly; the
/// best pair is then refined on a grid ten times finer around it.
pub fn two_term_fit(points: &[(f64, f64)], lo: f64, hi: f64, step: f64) -> Result<TwoTermFit> {
    if points.len() < 4 {
        return Err(Error::TooFewPoints {
            needed: 4,
            found: points.len(),
        });
    }
    if let Some(&(_, v)) = points.iter().find(|p| !(p.1 > 0.0)) {
        return Err(Error::NonPositiveValue(v));
    }
    if !(lo < hi) || !(step > 0.0) {
        return Err(Error::InvalidArgument("two-term fit needs lo < hi and step > 0".into()));
    }
    let coarse = search_pairs(points, grid(lo, hi, step), None);
    let fine_step = step / 10.0;
    let refine = |e: f64| grid((e - step).max(lo), (e + step).min(hi), fine_step);
    let (e1, e2) = (coarse.exponents[0], coarse.exponents[1]);
    let best = search_pairs(points, refine(e1), Some(refine(e2)));
    Ok(if best.rel_rms <= coarse.rel_rms { best } else { coarse })
}

fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| lo + i as f64 * step).collect()
}

fn search_pairs(points: &[(f64, f64)], first: Vec<f64>, second: Option<Vec<f64>>) -> TwoTermFit {
    let second = second.unwrap_or_else(|| first.clone());
    let mut best = TwoTermFit {
        exponents: [f64::NAN; 2],
        coefficients: [f64::NAN; 2],
        rel_rms: f64::INFINITY,
    };
    for &e1 in &first {
        for &e2 in &second {
            if e2 <= e1 + 1e-12 {
                continue;
            }
            if let Some((c, rms)) = solve_two_term(points, e1, e2) {
                if rms < best.rel_rms {
                    best = TwoTermFit {
                        exponents: [e1, e2],
                        coefficients: c,
                        rel_rms: rms,
                    };
                }
            }
        }
    }
    best
}

/// Minimizes `sum ((c1 t^e1 + c2 t^e2) / v - 1)^2` over `(c1, c2)`.
fn solve_two_term(points: &[(f64, f64)], e1: f64, e2: f64) -> Option<([f64; 2], f64)> {
    let (mut s11, mut s12, mut s22, mut r1, mut r2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(t, v) in points {
        let x1 = t.powf(e1) / v;
        let x2 = t.powf(e2) / v;
        s11 += x1 * x1;
        s12 += x1 * x2;
        s22 += x2 * x2;
        r1 += x1;
        r2 += x2;
    }
    let det = s11 * s22 - s12 * s12;
    if !(det.abs() > 1e-14 * s11 * s22) {
        return None;
    }
    let c1 = (r1 * s22 - r2 * s12) / det;
    let c2 = (s11 * r2 - s12 * r1) / det;
    let sse: f64 = points
        .iter()
        .map(|&(t, v)| ((c1 * t.powf(e1) + c2 * t.powf(e2)) / v - 1.0).powi(2))
        .sum();
    Some(([c1, c2], (sse / points.len() as f64).sqrt()))
}

/// Kolmogorov-Smirnov distance between the empirical law of `samples` and `cdf`.
pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    Ok(xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max))
}

/// One row of a `t,value,std_err` series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub t: usize,
    pub value: f64,
    pub std_err: f64,
}

impl From<MomentEstimate> for SeriesPoint {
    fn from(m: MomentEstimate) -> Self {
        SeriesPoint {
            t: m.t,
            value: m.value,
            std_err: m.std_err,
        }
    }
}

pub fn write_series_csv<W: Write>(mut w: W, series: &[SeriesPoint]) -> std::io::Result<()> {
    writeln!(w, "t,value,std_err")?;
    for p in series {
        writeln!(w, "{},{:e},{:e}", p.t, p.value, p.std_err)?;
    }
    Ok(())
}
