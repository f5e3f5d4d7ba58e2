//! Trajectory ensembles.
//!
//! Each trajectory is independent end to end: its OU path, its density-matrix
//! run and its oracle run depend only on `(cfg, index)`. Results are collected
//! in index order and reduced with the fixed tree of
//! [`ensemble_msd`](crate::observables::ensemble_msd), so every output is
//! bit-identical for any worker count.

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::evolver::{evolve_with, record_steps, Diagnostics, SimulationConfig, TrajectorySeries};
use crate::moments::{fpe_coefficients_with, oracle_trajectory, OracleRecord};
use crate::observables::{ensemble_msd, MsdSeries};
use crate::ou::{generate_trajectory, OuTrajectory};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// What to compute per trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnsembleOptions {
    pub workers: usize,
    pub quantum: bool,
    pub oracle: bool,
    /// Keep final density matrices (memory heavy for large ensembles).
    pub keep_final: bool,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        Self { workers: default_workers(), quantum: true, oracle: true, keep_final: false }
    }
}

/// Available cores, at least one.
pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

#[derive(Clone, Debug)]
pub struct TrajectoryOutcome {
    pub index: usize,
    pub seed: u64,
    pub quantum: Option<TrajectorySeries>,
    pub oracle: Option<Vec<OracleRecord>>,
    /// `(t, x_c(t)^2)` on the record grid.
    pub driving: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Failure {
    pub index: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug)]
pub struct EnsembleResult {
    pub outcomes: Vec<TrajectoryOutcome>,
    pub failures: Vec<Failure>,
    pub quantum: Option<MsdSeries>,
    pub oracle: Option<MsdSeries>,
    pub driving: MsdSeries,
}

impl EnsembleResult {
    pub fn is_partial(&self) -> bool {
        !self.failures.is_empty()
    }

    /// Worst diagnostics over every quantum record of every trajectory.
    pub fn worst_diagnostics(&self) -> Option<Diagnostics> {
        let mut out: Option<Diagnostics> = None;
        for s in self.outcomes.iter().filter_map(|o| o.quantum.as_ref()) {
            let w = s.worst();
            out = Some(match out {
                None => w,
                Some(o) => Diagnostics {
                    trace_dev: o.trace_dev.max(w.trace_dev),
                    herm_dev: o.herm_dev.max(w.herm_dev),
                    min_eig: o.min_eig.min(w.min_eig),
                    top_pop: o.top_pop.max(w.top_pop),
                },
            });
        }
        out
    }

    pub fn max_purity(&self) -> Option<f64> {
        self.outcomes.iter().filter_map(|o| o.quantum.as_ref()).map(|s| s.max_purity()).reduce(f64::max)
    }
}

/// The ordered trajectories of a configuration.
pub fn trajectories(cfg: &SimulationConfig) -> Result<Vec<OuTrajectory>> {
    (0..cfg.n_traj).map(|i| generate_trajectory(&cfg.ou, cfg.dt, cfg.t_final, cfg.seed(i))).collect()
}

/// Runs one trajectory of the ensemble.
pub fn run_trajectory(cfg: &SimulationConfig, index: usize, opts: &EnsembleOptions) -> Result<TrajectoryOutcome> {
    let traj = generate_trajectory(&cfg.ou, cfg.dt, cfg.t_final, cfg.seed(index))?;
    run_on_path(cfg, index, &traj, opts)
}

/// Runs the pipeline on a given path, e.g. a fixed trap center.
pub fn run_on_path(cfg: &SimulationConfig, index: usize, traj: &OuTrajectory, opts: &EnsembleOptions) -> Result<TrajectoryOutcome> {
    let steps = record_steps(cfg)?;
    let driving = steps.iter().map(|&k| (k as f64 * cfg.dt, traj.x_c(k).powi(2))).collect();
    let quantum = if opts.quantum { Some(evolve_with(traj, cfg, opts.keep_final)?) } else { None };
    let oracle = if opts.oracle {
        let coeffs = fpe_coefficients_with(&cfg.dissipator, cfg.force_exponent);
        Some(oracle_trajectory(traj, &coeffs, cfg)?)
    } else {
        None
    };
    Ok(TrajectoryOutcome { index, seed: traj.seed, quantum, oracle, driving })
}

fn run_all(cfg: &SimulationConfig, opts: &EnsembleOptions) -> Result<Vec<Result<TrajectoryOutcome>>> {
    let one = |i: usize| run_trajectory(cfg, i, opts);
    #[cfg(feature = "parallel")]
    if opts.workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.workers)
            .build()
            .map_err(|e| invalid(format!("cannot start worker pool: {e}")))?;
        return Ok(pool.install(|| (0..cfg.n_traj).into_par_iter().map(one).collect()));
    }
    Ok((0..cfg.n_traj).map(one).collect())
}

/// Runs the whole ensemble and reduces it in trajectory order.
pub fn run_ensemble(cfg: &SimulationConfig, opts: &EnsembleOptions) -> Result<EnsembleResult> {
    cfg.validate()?;
    if opts.workers == 0 {
        return Err(invalid("workers must be >= 1"));
    }
    let mut outcomes = Vec::with_capacity(cfg.n_traj);
    let mut failures = Vec::new();
    for (index, r) in run_all(cfg, opts)?.into_iter().enumerate() {
        match r {
            Ok(o) => outcomes.push(o),
            Err(e) => {
                log::error!("trajectory {index} (seed {}) aborted: {e}", cfg.seed(index));
                failures.push(Failure { index, seed: cfg.seed(index), error: e.to_string() });
            }
        }
    }
    if outcomes.is_empty() {
        let first = failures.first().map(|f| f.error.clone()).unwrap_or_default();
        return Err(invalid(format!("every trajectory failed; first error: {first}")));
    }
    let driving = ensemble_msd(&outcomes.iter().map(|o| o.driving.clone()).collect::<Vec<_>>())?;
    let quantum = if opts.quantum {
        Some(ensemble_msd(&outcomes.iter().map(|o| o.quantum.as_ref().unwrap().msd()).collect::<Vec<_>>())?)
    } else {
        None
    };
    let oracle = if opts.oracle {
        let runs: Vec<Vec<(f64, f64)>> =
            outcomes.iter().map(|o| o.oracle.as_ref().unwrap().iter().map(|r| (r.t, r.msd)).collect()).collect();
        Some(ensemble_msd(&runs)?)
    } else {
        None
    };
    Ok(EnsembleResult { outcomes, failures, quantum, oracle, driving })
}

/// Per-trajectory comparison of density-matrix and oracle moments.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OracleComparison {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub argmax_t: f64,
    /// Records failing `|q - o| <= rel |o|` and `|q - o| <= abs`.
    pub violations: usize,
    pub n_compared: usize,
}

/// Compares `<x>`, `<p>`, `<x^2>` and the MSD record by record.
///
/// A value passes when it is within `rel` relative or `abs` absolute.
pub fn compare_with_oracle(result: &EnsembleResult, rel: f64, abs: f64) -> Result<OracleComparison> {
    let mut cmp = OracleComparison { max_rel_err: 0.0, max_abs_err: 0.0, argmax_t: 0.0, violations: 0, n_compared: 0 };
    let mut worst = 0.0f64;
    for o in &result.outcomes {
        let (q, or) = match (&o.quantum, &o.oracle) {
            (Some(q), Some(or)) => (q, or),
            _ => return Err(Error::Pairing(format!("trajectory {} lacks a quantum or oracle run", o.index))),
        };
        if q.seed != o.seed || q.records.len() != or.len() {
            return Err(Error::Pairing(format!("trajectory {} records do not pair", o.index)));
        }
        for (a, b) in q.records.iter().zip(or) {
            if a.t != b.t {
                return Err(Error::Pairing(format!("time grids differ at t = {} vs {}", a.t, b.t)));
            }
            for (qv, ov) in [(a.mean_x, b.mean_x), (a.mean_p, b.mean_p), (a.mean_x2, b.mean_x2), (a.msd, b.msd)] {
                let d = (qv - ov).abs();
                let r = if ov != 0.0 { d / ov.abs() } else if d == 0.0 { 0.0 } else { f64::INFINITY };
                cmp.n_compared += 1;
                cmp.max_abs_err = cmp.max_abs_err.max(d);
                if !(d <= rel * ov.abs() || d <= abs) {
                    cmp.violations += 1;
                }
                // track the worst relative error among values above the absolute floor
                if d > abs && r > worst {
                    worst = r;
                    cmp.argmax_t = a.t;
                }
                if d > abs {
                    cmp.max_rel_err = cmp.max_rel_err.max(r);
                }
            }
        }
    }
    Ok(cmp)
}
