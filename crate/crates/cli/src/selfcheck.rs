//! Quick invariant sweep over every module.

use std::time::Instant;

use fedlsa::covariance::{lyapunov_residual, sigma_hat_t, sigma_infinity, sigma_t_full, solve_lyapunov};
use fedlsa::diagnostics::{rate_fit, rho_avg};
use fedlsa::engine::{run_bootstrap_ensemble, run_fedlsa, BootstrapSpec, FedLsa, UniformNoiseModel, WeightDistribution};
use fedlsa::environments::{garnet_federation, synthetic_system, toy_variance, GarnetSpec, SyntheticSpec};
use fedlsa::inference::{normal_cdf, normal_quantile};
use fedlsa::linalg::{min_symmetric_eigenvalue, symmetrize, Mat, Vector};
use fedlsa::model::{heterogeneity, noise_moments, MomentMode, NoiseMoments};
use fedlsa::schedule::Schedule;
use rand::{Rng, SeedableRng};

pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

pub struct Report {
    pub results: Vec<CheckResult>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for r in &self.results {
            s += &format!(
                "{} {:<28} {:>7.2}s  {}\n",
                if r.passed { "PASS" } else { "FAIL" },
                r.name,
                r.seconds,
                r.detail
            );
        }
        let failed = self.results.iter().filter(|r| !r.passed).count();
        s += &format!("{} checks, {failed} failed\n", self.results.len());
        s
    }
}

type Check = fn() -> Result<String, String>;

const CHECKS: &[(&str, Check)] = &[
    ("lyapunov-residual", lyapunov_random),
    ("lyapunov-scalar", lyapunov_scalar),
    ("normal-quantile", quantile),
    ("toy-variance", toy),
    ("rho-bound", rho_bound),
    ("unit-weights", unit_weights),
    ("run-determinism", determinism),
    ("moments-exact-vs-mc", moments),
    ("sigma-t-one-local-step", sigma_t_h1),
    ("homogeneous-heterogeneity", homogeneous),
];

pub fn run_selfcheck() -> Report {
    let results = CHECKS
        .iter()
        .map(|&(name, f)| {
            let start = Instant::now();
            let out = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".to_string()));
            let (passed, detail) = match out {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            CheckResult {
                name,
                passed,
                detail,
                seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect();
    Report { results }
}

fn ensure(ok: bool, detail: String) -> Result<String, String> {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

/// Random matrix shifted so the symmetric part has smallest eigenvalue 0.1.
fn random_stable(rng: &mut impl Rng, d: usize) -> Mat {
    let m = Mat::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    let shift = 0.1 - min_symmetric_eigenvalue(&symmetrize(&m));
    m + Mat::identity(d, d) * shift
}

fn lyapunov_random() -> Result<String, String> {
    let mut rng = rand::rngs::StdRng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let d = 1 + k % 10;
        let a = random_stable(&mut rng, d);
        let g = Mat::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let c = &g * g.transpose();
        let s = solve_lyapunov(&a, &c).map_err(e)?;
        worst = worst.max(lyapunov_residual(&a, &s, &c) / (1.0 + c.norm()));
    }
    ensure(worst <= 1e-10, format!("worst relative residual {worst:.2e}"))
}

fn lyapunov_scalar() -> Result<String, String> {
    let s = solve_lyapunov(&Mat::identity(1, 1), &Mat::identity(1, 1)).map_err(e)?;
    let err = (s[(0, 0)] - 0.5).abs();
    ensure(err <= 1e-12, format!("|Sigma - 0.5| = {err:.1e}"))
}

fn quantile() -> Result<String, String> {
    let z = normal_quantile(0.975).map_err(e)?;
    let back = (normal_cdf(z) - 0.975).abs();
    ensure(
        (z - 1.959_963_984_540_054).abs() <= 1e-8 && back <= 1e-12,
        format!("z_0.975 = {z}"),
    )
}

fn toy() -> Result<String, String> {
    let v = toy_variance(0.6, 1_000_000).map_err(e)?;
    let ts = [1_000usize, 10_000, 100_000, 1_000_000];
    let pts: Vec<(f64, f64)> = ts
        .iter()
        .map(|&t| (t as f64, (toy_variance(0.6, t).unwrap() - 0.5).abs()))
        .collect();
    let slope = rate_fit(&pts).map_err(e)?.slope;
    ensure(
        (v - 0.5).abs() <= 0.02 && (-0.5..=-0.3).contains(&slope),
        format!("v = {v:.4}, slope {slope:.3}"),
    )
}

fn rho_bound() -> Result<String, String> {
    let sched = Schedule::polynomial(0.1, 10, 0.6, 0.0).map_err(e)?;
    let mut violations = 0;
    for k in 0..50u64 {
        let (sys, _) = synthetic_system(&SyntheticSpec {
            skew: 0.0,
            ..SyntheticSpec::new(3, 4, 0.2, 1.0, 0.0, k)
        })
        .map_err(e)?;
        let rep = heterogeneity(&sys, &NoiseMoments::zero(4, 3)).map_err(e)?;
        for t in 1..=100 {
            let eta = sched.step_size(t).map_err(e)?;
            let h = sched.local_steps(t).map_err(e)? as f64;
            let bound = 0.5 * eta * eta * h * h * rep.zeta1 * rep.zeta2;
            if rho_avg(&sys, &sched, t).map_err(e)?.norm() > bound * (1.0 + 1e-12) {
                violations += 1;
            }
        }
    }
    ensure(violations == 0, format!("{violations} violations in 5000 rounds"))
}

fn unit_weights() -> Result<String, String> {
    let (sys, model) = synthetic_system(&SyntheticSpec::new(3, 3, 0.1, 0.2, 0.5, 3)).map_err(e)?;
    let run = FedLsa {
        system: &sys,
        model: &model,
        schedule: Schedule::polynomial(0.3, 4, 0.6, 0.0).map_err(e)?,
        rounds: 200,
        theta0: Vector::zeros(3),
        seed: 11,
    };
    let spec = BootstrapSpec {
        n_replicates: 8,
        weight_seed: 5,
        weights: WeightDistribution::Unit,
    };
    let ens = run_bootstrap_ensemble(&run, spec, true).map_err(e)?;
    let paths = ens.replicate_paths.as_ref().ok_or("no paths")?;
    let identical = paths.iter().all(|p| {
        p.iter()
            .zip(&ens.base.theta)
            .all(|(a, b)| a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()))
    });
    ensure(identical, "8 replicates x 200 rounds".into())
}

fn determinism() -> Result<String, String> {
    let (sys, model): (_, UniformNoiseModel) =
        synthetic_system(&SyntheticSpec::new(2, 2, 0.1, 0.1, 1.0, 1)).map_err(e)?;
    let sched = Schedule::polynomial(0.3, 2, 0.6, 0.0).map_err(e)?;
    let a = run_fedlsa(&sys, &model, sched, 300, &Vector::zeros(2), 4).map_err(e)?;
    let b = run_fedlsa(&sys, &model, sched, 300, &Vector::zeros(2), 4).map_err(e)?;
    let c = run_fedlsa(&sys, &model, sched, 300, &Vector::zeros(2), 5).map_err(e)?;
    ensure(a == b && a != c, "same seed equal, other seed differs".into())
}

fn moments() -> Result<String, String> {
    let fed = garnet_federation(&GarnetSpec::default()).map_err(e)?;
    let exact = noise_moments(&fed.system, &fed.model, MomentMode::Exact).map_err(e)?;
    let mc = noise_moments(
        &fed.system,
        &fed.model,
        MomentMode::MonteCarlo {
            draws: 100_000,
            seed: 3,
        },
    )
    .map_err(e)?;
    let se = &mc.sigma_star_avg_std_err;
    let mut worst: f64 = 0.0;
    for (i, (x, y)) in exact.sigma_star_avg.iter().zip(mc.sigma_star_avg.iter()).enumerate() {
        let s = se[i].max(1e-15);
        worst = worst.max((x - y).abs() / s);
    }
    ensure(worst <= 4.5, format!("max deviation {worst:.2} standard errors"))
}

fn sigma_t_h1() -> Result<String, String> {
    let fed = garnet_federation(&GarnetSpec::default()).map_err(e)?;
    let mom = noise_moments(&fed.system, &fed.model, MomentMode::Exact).map_err(e)?;
    let sched = Schedule::polynomial(0.5, 1, 0.6, 0.0).map_err(e)?;
    let full = sigma_t_full(&fed.system, &fed.model, &sched, 50).map_err(e)?;
    let hat = sigma_hat_t(&fed.system, &mom, &sched, 50).map_err(e)?;
    let inf = sigma_infinity(&fed.system, &mom).map_err(e)?;
    let diff = (&full - &hat).amax();
    ensure(
        diff <= 1e-10 * hat.amax() && inf.amax() > 0.0,
        format!("max |Sigma_t - Sigma_hat_t| = {diff:.1e}"),
    )
}

fn homogeneous() -> Result<String, String> {
    let (sys, _) = synthetic_system(&SyntheticSpec::new(4, 3, 0.0, 0.0, 0.1, 2)).map_err(e)?;
    let rep = heterogeneity(&sys, &NoiseMoments::zero(3, 4)).map_err(e)?;
    let sched = Schedule::polynomial(0.3, 10, 0.6, 0.0).map_err(e)?;
    let rho = rho_avg(&sys, &sched, 5).map_err(e)?.amax();
    ensure(
        rep.zeta1 <= 1e-14 && rep.zeta2 <= 1e-14 && rho <= 1e-14,
        format!("zeta1 {:.1e}, zeta2 {:.1e}, rho {rho:.1e}", rep.zeta1, rep.zeta2),
    )
}
