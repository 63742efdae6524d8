//! Rate studies: moment scaling, the scalar limiting variance and the
//! convergence of the leading covariance.

use std::io::Write;

use anyhow::{bail, Context, Result};
use fedlsa::covariance::{lyapunov_residual, sigma_hat_series, sigma_infinity};
use fedlsa::diagnostics::{mc_moment_series, rate_fit, two_term_fit, write_series_csv, RateFit, SeriesPoint, TwoTermFit};
use fedlsa::engine::ObservationModel;
use fedlsa::environments::ToyProcess1d;
use fedlsa::linalg::{spectral_norm, Mat};
use fedlsa::model::{noise_moments, FederatedSystem, MomentMode, NoiseMoments};
use serde::Serialize;

use crate::config::{ExperimentConfig, SystemConfig};
use crate::output::{fmt_f64, write_meta};
use crate::system::{build, homogeneous_variant, theta0, Built};
use crate::with_model;

/// Draws per agent for Monte-Carlo noise moments of non-enumerable models.
pub const MC_MOMENT_DRAWS: usize = 200_000;

fn ensure_dir(cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.output).with_context(|| format!("creating {}", cfg.output.display()))
}

fn write_file(cfg: &ExperimentConfig, name: &str, bytes: Vec<u8>) -> Result<()> {
    let path = cfg.output.join(name);
    std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Clone, Serialize)]
pub struct MseReport {
    pub series: Vec<SeriesPoint>,
    pub n_diverged: Vec<usize>,
    pub fit: RateFit,
}

/// `E^{1/p} ||theta_T - theta*||^p` at each `T` and its log-log slope.
pub fn run_mse_scaling(cfg: &ExperimentConfig) -> Result<MseReport> {
    cfg.validate()?;
    let built = build(cfg.system.as_ref().expect("validated"))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.resolved_workers()?)
        .build()?;
    let sched = cfg.schedule.expect("validated");
    let start = theta0(cfg.theta0.as_ref(), built.system().dim())?;
    let est = with_model!(&built, |sys, model| pool.install(|| mc_moment_series(
        sys,
        model,
        sched,
        &cfg.rounds,
        cfg.moment,
        cfg.n_trajectories,
        &start,
        cfg.seed
    )))?;
    let series: Vec<SeriesPoint> = est.iter().map(|&m| m.into()).collect();
    let pts: Vec<(f64, f64)> = series.iter().map(|p| (p.t as f64, p.value)).collect();
    let fit = rate_fit(&pts)?;
    Ok(MseReport {
        n_diverged: est.iter().map(|m| m.n_diverged).collect(),
        series,
        fit,
    })
}

pub fn write_mse(cfg: &ExperimentConfig, report: &MseReport) -> Result<()> {
    ensure_dir(cfg)?;
    let mut buf = Vec::new();
    write_series_csv(&mut buf, &report.series)?;
    write_file(cfg, "mse.csv", buf)?;
    write_meta(cfg, serde_json::json!({ "fit": report.fit, "n_diverged": report.n_diverged }))
}

#[derive(Debug, Clone, Serialize)]
pub struct VarianceReport {
    pub gamma: f64,
    pub rounds: Vec<usize>,
    pub values: Vec<f64>,
    /// Fit of `|v_t - 1/2|`; `None` with fewer than three positive gaps.
    pub fit: Option<RateFit>,
}

pub fn run_variance_1d(cfg: &ExperimentConfig) -> Result<VarianceReport> {
    cfg.validate()?;
    let Some(SystemConfig::Toy { gamma }) = cfg.system else {
        bail!("variance-1d needs the toy system");
    };
    let values = ToyProcess1d::new(gamma)?.variance_series(&cfg.rounds)?;
    let pts: Vec<(f64, f64)> = cfg
        .rounds
        .iter()
        .zip(&values)
        .map(|(&t, v)| (t as f64, (v - 0.5).abs()))
        .filter(|p| p.1 > 0.0)
        .collect();
    let fit = if pts.len() >= 3 { Some(rate_fit(&pts)?) } else { None };
    Ok(VarianceReport {
        gamma,
        rounds: cfg.rounds.clone(),
        values,
        fit,
    })
}

pub fn write_variance(cfg: &ExperimentConfig, report: &VarianceReport) -> Result<()> {
    ensure_dir(cfg)?;
    let mut buf = Vec::new();
    writeln!(buf, "t,v_t,abs_gap")?;
    for (t, v) in report.rounds.iter().zip(&report.values) {
        writeln!(buf, "{t},{},{}", fmt_f64(*v), fmt_f64((v - 0.5).abs()))?;
    }
    write_file(cfg, "variance.csv", buf)?;
    write_meta(
        cfg,
        serde_json::json!({ "fit": report.fit, "expected_slope": report.gamma - 1.0 }),
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct SigmaVariant {
    pub label: &'static str,
    pub gaps: Vec<f64>,
    /// `||Abar S + S Abar^T - Sigma*_avg / N||_F` for the computed `Sigma_inf`.
    pub lyapunov_residual: f64,
    pub fit: Option<TwoTermFit>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SigmaReport {
    pub rounds: Vec<usize>,
    pub variants: Vec<SigmaVariant>,
    /// `[gamma - 1, -gamma]`.
    pub expected_exponents: [f64; 2],
}

impl SigmaReport {
    pub fn variant(&self, label: &str) -> Option<&SigmaVariant> {
        self.variants.iter().find(|v| v.label == label)
    }
}

/// Exponent grid for the two-term fit.
pub const FIT_GRID: (f64, f64, f64) = (-1.5, 0.0, 0.02);

fn moments_for<M: ObservationModel>(sys: &FederatedSystem, model: &M, seed: u64) -> Result<NoiseMoments> {
    match noise_moments(sys, model, MomentMode::Exact) {
        Err(fedlsa::error::Error::NotEnumerable) => Ok(noise_moments(
            sys,
            model,
            MomentMode::MonteCarlo {
                draws: MC_MOMENT_DRAWS,
                seed,
            },
        )?),
        other => Ok(other?),
    }
}

/// `||Sigma_hat_t - Sigma_inf||` on the configured rounds for the system and
/// its homogeneous counterpart.
pub fn run_sigma_convergence(cfg: &ExperimentConfig) -> Result<SigmaReport> {
    cfg.validate()?;
    let sys_cfg = cfg.system.as_ref().expect("validated");
    let sched = cfg.schedule.expect("validated");
    let mut variants = Vec::new();
    let homogeneous = homogeneous_variant(sys_cfg).expect("not toy");
    for (label, sc) in [("heterogeneous", sys_cfg), ("homogeneous", &homogeneous)] {
        let built: Built = build(sc)?;
        let (mom, sys) = with_model!(&built, |sys, model| (moments_for(sys, model, cfg.seed)?, sys));
        let inf = sigma_infinity(sys, &mom)?;
        let c: Mat = &mom.sigma_star_avg / sys.n_agents() as f64;
        let residual = lyapunov_residual(sys.a_avg(), &inf, &c);
        let hats = sigma_hat_series(sys, &mom, &sched, &cfg.rounds)?;
        let gaps: Vec<f64> = hats.iter().map(|h| spectral_norm(&(h - &inf))).collect();
        let pts: Vec<(f64, f64)> = cfg.rounds.iter().zip(&gaps).map(|(&t, &g)| (t as f64, g)).collect();
        let fit = if pts.len() >= 4 && pts.iter().all(|p| p.1 > 0.0) {
            Some(two_term_fit(&pts, FIT_GRID.0, FIT_GRID.1, FIT_GRID.2)?)
        } else {
            None
        };
        variants.push(SigmaVariant {
            label,
            gaps,
            lyapunov_residual: residual,
            fit,
        });
    }
    let g = sched.gamma();
    Ok(SigmaReport {
        rounds: cfg.rounds.clone(),
        variants,
        expected_exponents: [g - 1.0, -g],
    })
}

pub fn write_sigma(cfg: &ExperimentConfig, report: &SigmaReport) -> Result<()> {
    ensure_dir(cfg)?;
    let mut buf = Vec::new();
    writeln!(buf, "system,t,gap")?;
    for v in &report.variants {
        for (t, g) in report.rounds.iter().zip(&v.gaps) {
            writeln!(buf, "{},{t},{}", v.label, fmt_f64(*g))?;
        }
    }
    write_file(cfg, "sigma.csv", buf)?;
    let fits: Vec<_> = report
        .variants
        .iter()
        .map(|v| serde_json::json!({"system": v.label, "fit": v.fit, "lyapunov_residual": v.lyapunov_residual}))
        .collect();
    write_meta(
        cfg,
        serde_json::json!({ "fits": fits, "expected_exponents": report.expected_exponents }),
    )
}
