//! Experiment configuration files.
//!
//! A config is one JSON object. Unknown keys are rejected. `workers` and
//! `output` do not affect results and are left out of the config hash.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fedlsa::covariance::PluginVariant;
use fedlsa::engine::WeightDistribution;
use fedlsa::environments::{GarnetSpec, SyntheticSpec};
use fedlsa::schedule::Schedule;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Environment variable read when the config has no `workers` entry.
pub const WORKERS_ENV: &str = "FEDLSA_WORKERS";

pub const FULL_TRAJECTORIES: usize = 1024;
pub const FULL_BOOTSTRAP: usize = 256;
pub const FULL_ROUNDS: [usize; 4] = [2000, 6000, 10000, 14000];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Coverage,
    MseScaling,
    #[serde(rename = "variance-1d")]
    Variance1d,
    SigmaConvergence,
    Selfcheck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SystemConfig {
    Garnet(GarnetSpec),
    Synthetic(SyntheticSpec),
    Toy { gamma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MethodName {
    Pe,
    Eq,
    Sdb,
    Sim,
}

impl MethodName {
    pub fn as_str(self) -> &'static str {
        match self {
            MethodName::Pe => "PE",
            MethodName::Eq => "EQ",
            MethodName::Sdb => "SDB",
            MethodName::Sim => "SIM",
        }
    }
}

fn default_trajectories() -> usize {
    256
}
fn default_bootstrap() -> usize {
    128
}
fn default_levels() -> Vec<f64> {
    vec![0.95]
}
fn default_methods() -> Vec<MethodName> {
    vec![MethodName::Pe, MethodName::Eq, MethodName::Sdb]
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}
fn default_moment() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub system: Option<SystemConfig>,
    pub schedule: Option<Schedule>,
    /// Rounds `T` at which results are reported, ascending.
    #[serde(default, rename = "T")]
    pub rounds: Vec<usize>,
    #[serde(default = "default_trajectories", rename = "R")]
    pub n_trajectories: usize,
    #[serde(default = "default_bootstrap", rename = "N_b")]
    pub n_bootstrap: usize,
    #[serde(default = "default_levels")]
    pub levels: Vec<f64>,
    #[serde(default = "default_methods")]
    pub methods: Vec<MethodName>,
    #[serde(default)]
    pub seed: u64,
    /// Seed of the projection direction `u`; defaults to `seed`.
    #[serde(default)]
    pub projection_seed: Option<u64>,
    #[serde(default)]
    pub weights: WeightDistribution,
    #[serde(default)]
    pub plugin: PluginVariant,
    /// Starting point; zeros when absent.
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
    /// Moment order `p` for `mse-scaling`.
    #[serde(default = "default_moment")]
    pub moment: f64,
    /// Also write one row per interval to `intervals.csv`.
    #[serde(default)]
    pub record_intervals: bool,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub workers: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).context("parsing config")?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Replaces `R`, `N_b` and `T` by the full-table sizes.
    pub fn paper_scale(mut self) -> Self {
        self.n_trajectories = FULL_TRAJECTORIES;
        self.n_bootstrap = FULL_BOOTSTRAP;
        self.rounds = FULL_ROUNDS.to_vec();
        self
    }

    pub fn projection_seed(&self) -> u64 {
        self.projection_seed.unwrap_or(self.seed)
    }

    /// Config value, then the environment variable, then 1.
    pub fn resolved_workers(&self) -> Result<usize> {
        if let Some(w) = self.workers {
            return Ok(w);
        }
        match std::env::var(WORKERS_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .with_context(|| format!("{WORKERS_ENV}={v} is not a worker count")),
            Err(_) => Ok(1),
        }
    }

    /// Checks every block before any work starts.
    pub fn validate(&self) -> Result<()> {
        if self.workers == Some(0) {
            bail!("workers must be at least 1");
        }
        if self.experiment == Experiment::Selfcheck {
            return Ok(());
        }
        let Some(system) = &self.system else {
            bail!("missing system block");
        };
        match system {
            SystemConfig::Garnet(spec) => spec.validate()?,
            SystemConfig::Synthetic(spec) => {
                if spec.dim == 0 || spec.n_agents == 0 {
                    bail!("synthetic system needs dim >= 1 and n_agents >= 1");
                }
                if !(spec.noise_scale >= 0.0) {
                    bail!("noise_scale must be nonnegative");
                }
            }
            SystemConfig::Toy { gamma } => {
                if !(*gamma > 0.0 && *gamma < 1.0) {
                    bail!("toy gamma must lie in (0, 1)");
                }
            }
        }
        if self.rounds.is_empty() {
            bail!("T list is empty");
        }
        if self.rounds.iter().any(|&t| t < 1) {
            bail!("rounds start at 1");
        }
        if self.rounds.windows(2).any(|w| w[0] >= w[1]) {
            bail!("T list must be strictly ascending");
        }
        let toy = matches!(system, SystemConfig::Toy { .. });
        match self.experiment {
            Experiment::Variance1d => {
                if !toy {
                    bail!("variance-1d needs the toy system");
                }
                if self.rounds[0] < 2 {
                    bail!("variance-1d rounds start at 2");
                }
            }
            _ if toy => bail!("the toy system only supports variance-1d"),
            _ => {
                if self.schedule.is_none() {
                    bail!("missing schedule block");
                }
            }
        }
        if self.experiment == Experiment::Coverage {
            if self.n_trajectories < 1 {
                bail!("R must be at least 1");
            }
            if self.n_bootstrap < 1 {
                bail!("N_b must be at least 1");
            }
            if self.levels.is_empty() || self.levels.iter().any(|&l| !(l > 0.0 && l < 1.0)) {
                bail!("levels must lie in (0, 1)");
            }
            if self.methods.is_empty() {
                bail!("no methods requested");
            }
        }
        if self.experiment == Experiment::MseScaling {
            if self.n_trajectories < 2 {
                bail!("mse-scaling needs R >= 2");
            }
            if !(self.moment >= 1.0) {
                bail!("moment order must be >= 1");
            }
        }
        Ok(())
    }

    /// The parts of the config that determine results, as canonical JSON.
    pub fn canonical_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("workers");
            obj.remove("output");
        }
        // serde_json maps are sorted, so this is canonical
        serde_json::to_string(&v).expect("value serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const COVERAGE: &str = r#"{
        "experiment": "coverage",
        "system": {"kind": "garnet", "n_states": 30, "seed": 0},
        "schedule": {"kind": "polynomial", "eta": 0.075, "H": 20, "gamma_eta": 0.6},
        "T": [2000, 6000],
        "R": 8,
        "N_b": 32,
        "methods": ["EQ", "SDB", "PE", "SIM"],
        "output": "out/x"
    }"#;

    #[test]
    fn parses_and_validates() {
        let cfg = ExperimentConfig::from_json(COVERAGE).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.rounds, vec![2000, 6000]);
        assert_eq!(cfg.levels, vec![0.95]);
        assert!(matches!(cfg.system, Some(SystemConfig::Garnet(ref g)) if g.n_agents == 5));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = COVERAGE.replace("\"R\": 8", "\"R\": 8, \"bogus\": 1");
        assert!(ExperimentConfig::from_json(&text).is_err());
        let text = COVERAGE.replace("\"seed\": 0}", "\"seed\": 0, \"colour\": 1}");
        assert!(ExperimentConfig::from_json(&text).is_err());
    }

    #[test]
    fn bad_blocks_fail_validation() {
        for (from, to) in [
            ("[2000, 6000]", "[6000, 2000]"),
            ("\"n_states\": 30", "\"n_states\": 1"),
            ("\"R\": 8", "\"R\": 0"),
            ("\"output\"", "\"levels\": [1.5], \"output\""),
        ] {
            let cfg = ExperimentConfig::from_json(&COVERAGE.replace(from, to)).unwrap();
            assert!(cfg.validate().is_err(), "{to}");
        }
        let bad_schedule = COVERAGE.replace("\"eta\": 0.075", "\"eta\": -1.0");
        assert!(ExperimentConfig::from_json(&bad_schedule).is_err());
    }

    #[test]
    fn hash_ignores_workers_and_output() {
        let a = ExperimentConfig::from_json(COVERAGE).unwrap();
        let mut b = a.clone();
        b.workers = Some(4);
        b.output = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn paper_scale_overrides_sizes() {
        let cfg = ExperimentConfig::from_json(COVERAGE).unwrap().paper_scale();
        assert_eq!((cfg.n_trajectories, cfg.n_bootstrap), (1024, 256));
        assert_eq!(cfg.rounds, FULL_ROUNDS.to_vec());
    }
}
