//! Experiment harness for `fedlsa`: declarative JSON configs, deterministic
//! parallel runs and CSV output.

pub mod config;
pub mod coverage;
pub mod output;
pub mod selfcheck;
pub mod studies;
pub mod system;

use anyhow::Result;

use config::{Experiment, ExperimentConfig};

/// Runs the experiment named by `cfg` and writes its files under `cfg.output`.
pub fn run(cfg: &ExperimentConfig) -> Result<String> {
    cfg.validate()?;
    match cfg.experiment {
        Experiment::Coverage => {
            let table = coverage::run_coverage(cfg)?;
            coverage::write_coverage(cfg, &table)?;
            let mut buf = Vec::new();
            table.write_csv(&mut buf)?;
            Ok(String::from_utf8(buf)?)
        }
        Experiment::MseScaling => {
            let report = studies::run_mse_scaling(cfg)?;
            studies::write_mse(cfg, &report)?;
            Ok(format!("slope {:.4} (r2 {:.4})\n", report.fit.slope, report.fit.r2))
        }
        Experiment::Variance1d => {
            let report = studies::run_variance_1d(cfg)?;
            studies::write_variance(cfg, &report)?;
            Ok(match &report.fit {
                Some(f) => format!("slope of |v_t - 1/2|: {:.4}\n", f.slope),
                None => "too few points for a slope\n".to_string(),
            })
        }
        Experiment::SigmaConvergence => {
            let report = studies::run_sigma_convergence(cfg)?;
            studies::write_sigma(cfg, &report)?;
            let mut s = String::new();
            for v in &report.variants {
                if let Some(f) = &v.fit {
                    s += &format!("{}: exponents {:.3} {:.3}\n", v.label, f.exponents[0], f.exponents[1]);
                }
            }
            Ok(s)
        }
        Experiment::Selfcheck => {
            let report = selfcheck::run_selfcheck();
            if report.passed() {
                Ok(report.render())
            } else {
                anyhow::bail!("{}", report.render())
            }
        }
    }
}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book_cli {}
