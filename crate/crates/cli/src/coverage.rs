//! Coverage study: many independent trajectories, each with its own
//! bootstrap ensemble, scored against the true solution.

use std::io::Write;
use std::time::Instant;

use anyhow::{Context, Result};
use fedlsa::covariance::plugin_sigma_infinity;
use fedlsa::engine::{derive_seed, BootstrapSpec, Checkpoint, FedLsa, NoObserver, ObservationModel, RunOptions};
use fedlsa::inference::{
    eq_interval, pe_interval, projection_hash, random_projection, sdb_interval, sim_region, write_interval_csv,
    CoverageResult, IntervalRecord,
};
use fedlsa::linalg::Vector;
use fedlsa::model::FederatedSystem;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, MethodName};
use crate::output::{fmt_f64, write_meta};
use crate::system::{build, theta0};
use crate::with_model;

const LABEL_TRAJECTORY: u64 = 0x7472_616a;
const LABEL_WEIGHTS: u64 = 0x7767_6874;

/// A trajectory is excluded at a round when more than this share of its
/// bootstrap replicates has diverged.
pub const MAX_DROPPED_SHARE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageRow {
    #[serde(rename = "T")]
    pub t: usize,
    pub method: MethodName,
    pub level: f64,
    pub coverage: f64,
    pub std_err: f64,
    /// Trajectories left out of this row.
    pub dropped: usize,
    pub hits: usize,
    pub trials: usize,
}

#[derive(Debug, Clone)]
pub struct CoverageTable {
    pub rows: Vec<CoverageRow>,
    pub u: Vector,
    pub theta_star: Vector,
    pub intervals: Vec<IntervalRecord>,
    pub runtime_seconds: f64,
    pub provenance: serde_json::Value,
}

impl CoverageTable {
    pub fn row(&self, t: usize, method: MethodName, level: f64) -> Option<&CoverageRow> {
        self.rows
            .iter()
            .find(|r| r.t == t && r.method == method && r.level == level)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "T,method,level,coverage,std_err,dropped")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.t,
                r.method.as_str(),
                fmt_f64(r.level),
                fmt_f64(r.coverage),
                fmt_f64(r.std_err),
                r.dropped
            )?;
        }
        Ok(())
    }
}

/// `Some(covered)` per (method, level) or `None` when the interval could not
/// be built.
enum Scored {
    Excluded,
    Hits(Vec<Option<bool>>),
}

struct TrajectoryResult {
    per_round: Vec<Scored>,
    intervals: Vec<IntervalRecord>,
}

pub fn run_coverage(cfg: &ExperimentConfig) -> Result<CoverageTable> {
    cfg.validate()?;
    let start = Instant::now();
    let built = build(cfg.system.as_ref().expect("validated"))?;
    let workers = cfg.resolved_workers()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("building worker pool")?;
    let u = random_projection(cfg.projection_seed(), built.system().dim());
    let (rows, intervals) = with_model!(&built, |sys, model| pool.install(|| score_all(cfg, sys, model, &u)))?;
    Ok(CoverageTable {
        rows,
        theta_star: built.system().theta_star().clone(),
        u,
        intervals,
        runtime_seconds: start.elapsed().as_secs_f64(),
        provenance: built.provenance(),
    })
}

fn combos(cfg: &ExperimentConfig) -> Vec<(MethodName, f64)> {
    let mut methods = cfg.methods.clone();
    methods.sort();
    methods.dedup();
    methods
        .into_iter()
        .flat_map(|m| cfg.levels.iter().map(move |&l| (m, l)))
        .collect()
}

fn score_all<M: ObservationModel + Sync>(
    cfg: &ExperimentConfig,
    sys: &FederatedSystem,
    model: &M,
    u: &Vector,
) -> Result<(Vec<CoverageRow>, Vec<IntervalRecord>)> {
    let combos = combos(cfg);
    let start = theta0(cfg.theta0.as_ref(), sys.dim())?;
    let results: Vec<TrajectoryResult> = (0..cfg.n_trajectories)
        .into_par_iter()
        .map(|r| score_trajectory(cfg, sys, model, u, &start, &combos, r))
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (k, &t) in cfg.rounds.iter().enumerate() {
        for (j, &(method, level)) in combos.iter().enumerate() {
            let (mut hits, mut trials, mut dropped) = (0, 0, 0);
            for res in &results {
                match &res.per_round[k] {
                    Scored::Hits(h) => match h[j] {
                        Some(c) => {
                            trials += 1;
                            hits += usize::from(c);
                        }
                        None => dropped += 1,
                    },
                    Scored::Excluded => dropped += 1,
                }
            }
            let (coverage, std_err) = if trials > 0 {
                let c = CoverageResult::from_counts(hits, trials)?;
                (c.coverage, c.std_err)
            } else {
                (f64::NAN, f64::NAN)
            };
            rows.push(CoverageRow {
                t,
                method,
                level,
                coverage,
                std_err,
                dropped,
                hits,
                trials,
            });
        }
    }
    let intervals = results.into_iter().flat_map(|r| r.intervals).collect();
    Ok((rows, intervals))
}

fn score_trajectory<M: ObservationModel>(
    cfg: &ExperimentConfig,
    sys: &FederatedSystem,
    model: &M,
    u: &Vector,
    start: &Vector,
    combos: &[(MethodName, f64)],
    r: usize,
) -> Result<TrajectoryResult> {
    let wants_pe = combos.iter().any(|c| c.0 == MethodName::Pe);
    let run = FedLsa {
        system: sys,
        model,
        schedule: cfg.schedule.expect("validated"),
        rounds: *cfg.rounds.last().expect("validated"),
        theta0: start.clone(),
        seed: derive_seed(cfg.seed, LABEL_TRAJECTORY, r as u64),
    };
    let opts = RunOptions {
        checkpoints: cfg.rounds.clone(),
        plugin: wants_pe,
        bootstrap: Some(BootstrapSpec {
            n_replicates: cfg.n_bootstrap,
            weight_seed: derive_seed(cfg.seed, LABEL_WEIGHTS, r as u64),
            weights: cfg.weights,
        }),
        ..Default::default()
    };
    let out = run.simulate(&opts, &mut NoObserver)?;
    let star = sys.theta_star();
    let truth = u.dot(star);
    let mut intervals = Vec::new();
    let per_round = cfg
        .rounds
        .iter()
        .map(|&t| {
            let Some(cp) = out.checkpoints.iter().find(|c| c.round == t) else {
                log::warn!("trajectory {r}: base run diverged before T = {t}; excluded");
                return Scored::Excluded;
            };
            if cp.dropped_replicates() as f64 > MAX_DROPPED_SHARE * cfg.n_bootstrap as f64 {
                log::warn!(
                    "trajectory {r}: {} of {} replicates diverged by T = {t}; excluded",
                    cp.dropped_replicates(),
                    cfg.n_bootstrap
                );
                return Scored::Excluded;
            }
            Scored::Hits(
                combos
                    .iter()
                    .map(|&(method, level)| {
                        score_one(cfg, cp, u, star, truth, method, level, r, &mut intervals)
                    })
                    .collect(),
            )
        })
        .collect();
    Ok(TrajectoryResult { per_round, intervals })
}

#[allow(clippy::too_many_arguments)]
fn score_one(
    cfg: &ExperimentConfig,
    cp: &Checkpoint,
    u: &Vector,
    star: &Vector,
    truth: f64,
    method: MethodName,
    level: f64,
    r: usize,
    intervals: &mut Vec<IntervalRecord>,
) -> Option<bool> {
    let boot = cp.finite_replicates();
    let ci = match method {
        MethodName::Sim => {
            return match sim_region(&cp.theta, &boot, cp.eta, level) {
                Ok(region) => Some(region.covers(star)),
                Err(e) => {
                    log::warn!("trajectory {r}, T = {}: SIM failed: {e}", cp.round);
                    None
                }
            };
        }
        MethodName::Eq => eq_interval(&cp.theta, &boot, cp.eta, u, level),
        MethodName::Sdb => sdb_interval(&cp.theta, &boot, cp.eta, u, level),
        MethodName::Pe => cp
            .plugin
            .as_ref()
            .ok_or(fedlsa::error::Error::EmptySamples)
            .and_then(|acc| plugin_sigma_infinity(acc, cfg.plugin))
            .and_then(|sigma| pe_interval(&cp.theta, &sigma, cp.eta, u, level)),
    };
    match ci {
        Ok(ci) => {
            let rec = IntervalRecord::new(r, cp.round, &ci, truth);
            let covered = rec.covered;
            if cfg.record_intervals {
                intervals.push(rec);
            }
            Some(covered)
        }
        Err(e) => {
            log::warn!("trajectory {r}, T = {}: {} failed: {e}", cp.round, method.as_str());
            None
        }
    }
}

/// Writes `coverage.csv`, `meta.json` and, when requested, `intervals.csv`.
pub fn write_coverage(cfg: &ExperimentConfig, table: &CoverageTable) -> Result<()> {
    let dir = &cfg.output;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut buf = Vec::new();
    table.write_csv(&mut buf)?;
    std::fs::write(dir.join("coverage.csv"), buf)?;
    if cfg.record_intervals {
        let mut buf = Vec::new();
        write_interval_csv(&mut buf, &table.intervals)?;
        std::fs::write(dir.join("intervals.csv"), buf)?;
    }
    write_meta(
        cfg,
        serde_json::json!({
            "u": table.u.as_slice(),
            "u_hash": format!("{:016x}", projection_hash(&table.u)),
            "theta_star": table.theta_star.as_slice(),
            "system": table.provenance,
            "rows": table.rows,
            "runtime_seconds": table.runtime_seconds,
        }),
    )
}
