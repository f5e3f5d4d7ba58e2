//! Steady-state Wigner and oracle-comparison commands.

use std::path::Path;

use qam_core::ensemble::{run_on_path, EnsembleOptions};
use qam_core::fock::{build_operator_set, expectation};
use qam_core::moments::{fpe_coefficients_with, steady_covariance};
use qam_core::wigner::{analytic_steady, analytic_steady_static, wigner_from_displaced, wigner_peak, FieldMoments};
use qam_core::{AnalyticGaussian, DensityMatrix, DissipatorKind, OuTrajectory, SimulationConfig, WignerField};
use serde::Serialize;

use crate::config::{Cell, ExperimentManifest};
use crate::error::CliError;
use crate::runner::{run_experiment, write_json, CellOutcome, Health};

/// Residual fraction of the initial offset left by the default relaxation
/// time.
pub const RELAX_RESIDUAL: f64 = 1e-3;

/// Slowest decay rate of the mean at fixed `x_c`: the smallest real part
/// of the drift matrix's eigenvalues.
pub fn slowest_rate(cfg: &SimulationConfig) -> f64 {
    let a = fpe_coefficients_with(&cfg.dissipator, cfg.force_exponent).a();
    let (tr, det) = (a.trace(), a.determinant());
    let disc = 0.25 * tr * tr - det;
    if disc >= 0.0 {
        0.5 * tr - disc.sqrt()
    } else {
        0.5 * tr
    }
}

/// Time for the mean to relax to [`RELAX_RESIDUAL`] of its initial offset.
pub fn default_t_relax(cfg: &SimulationConfig) -> Result<f64, CliError> {
    let rate = slowest_rate(cfg);
    if rate > 0.0 {
        Ok(-RELAX_RESIDUAL.ln() / rate)
    } else {
        Err(CliError::Config("no steady state (gamma = 0): pass --t-relax explicitly".into()))
    }
}

/// Moments read from the density matrix itself.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StateMoments {
    pub mean: [f64; 2],
    pub covariance: [[f64; 2]; 2],
}

/// `offset` is the phase-space translation of the frame `rho` is held in.
pub fn state_moments(rho: &DensityMatrix, offset: [f64; 2]) -> Result<StateMoments, CliError> {
    let ops = build_operator_set(rho.dim())?;
    let x = expectation(rho, &ops.x_op)?;
    let p = expectation(rho, &ops.p_op)?;
    let xx = expectation(rho, &(&ops.x_op * &ops.x_op))?;
    let pp = expectation(rho, &(&ops.p_op * &ops.p_op))?;
    let sym = (&ops.x_op * &ops.p_op + &ops.p_op * &ops.x_op) * qam_core::C64::new(0.5, 0.0);
    let xp = expectation(rho, &sym)?;
    Ok(StateMoments { mean: [x + offset[0], p + offset[1]], covariance: [[xx - x * x, xp - x * p], [xp - x * p, pp - p * p]] })
}

/// `peak.json` of the wigner command.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WignerReport {
    pub kind: DissipatorKind,
    pub nu_minus: f64,
    pub dim: usize,
    pub x_c: f64,
    pub t_relax: f64,
    pub peak: [f64; 2],
    pub grid_spacing: [f64; 2],
    pub field: FieldMoments,
    pub state: StateMoments,
    pub health: Health,
    /// `"ok"` or `"no-steady-state"`.
    pub steady_state: String,
    pub analytic_mean: Option<[f64; 2]>,
    pub analytic_covariance: Option<[[f64; 2]; 2]>,
    /// Peak offset from the analytic mean, in grid cells.
    pub peak_offset_cells: Option<[f64; 2]>,
    /// Largest entry of `|field covariance - analytic covariance|`.
    pub covariance_error: Option<f64>,
}

pub struct WignerRun {
    pub field: WignerField,
    pub analytic: Option<AnalyticGaussian>,
    pub report: WignerReport,
}

/// Evolves the ground state at fixed `x_c` to `t_relax` and compares its
/// Wigner function with the analytic steady state.
pub fn run_wigner(manifest: &ExperimentManifest, x_c: f64, t_relax: Option<f64>) -> Result<WignerRun, CliError> {
    if manifest.sweep.iter().any(|a| a.path == "dissipator.kind" && a.values.len() > 1) {
        return Err(CliError::Config("wigner needs a single dissipator; remove the kind sweep".into()));
    }
    if !x_c.is_finite() {
        return Err(CliError::Config(format!("x_c must be finite, got {x_c}")));
    }
    let t_relax = match t_relax {
        Some(t) if t > 0.0 && t.is_finite() => t,
        Some(t) => return Err(CliError::Config(format!("t_relax must be positive, got {t}"))),
        None => default_t_relax(&manifest.cfg)?,
    };
    let cfg = SimulationConfig { t_final: t_relax, n_traj: 1, log_records_per_decade: None, ..manifest.cfg.clone() };
    let path = OuTrajectory::fixed(x_c, cfg.dt, t_relax)?;
    let opts = EnsembleOptions { workers: 1, quantum: true, oracle: false, keep_final: true };
    let out = run_on_path(&cfg, 0, &path, &opts)?;
    let series = out.quantum.expect("quantum run requested");
    let health = Health::assess(cfg.dissipator.kind, series.worst(), series.max_purity());
    let rho = series.final_state.as_ref().expect("final state kept");
    let grid = manifest.wigner.grid.grid()?;
    let offset = series.final_offset;
    let field = wigner_from_displaced(rho, offset, &grid)?;
    let (px, pp) = wigner_peak(&field)?;
    let th = cfg.dissipator.thermal;
    let analytic = match cfg.dissipator.kind {
        DissipatorKind::StaticLindblad => analytic_steady_static(x_c, &th),
        kind => analytic_steady(kind, x_c, &th),
    };
    let (analytic, steady_state) = match analytic {
        Ok(a) => (Some(a), "ok".to_string()),
        Err(qam_core::Error::NoSteadyState { .. }) => (None, "no-steady-state".to_string()),
        Err(e) => return Err(e.into()),
    };
    let moments = field.moments();
    let report = WignerReport {
        kind: cfg.dissipator.kind,
        nu_minus: th.nu_minus,
        dim: cfg.dim,
        x_c,
        t_relax,
        peak: [px, pp],
        grid_spacing: [grid.dx(), grid.dp()],
        field: moments,
        state: state_moments(rho, offset)?,
        health,
        steady_state,
        analytic_mean: analytic.as_ref().map(|a| a.mean),
        analytic_covariance: analytic.as_ref().map(|a| a.covariance),
        peak_offset_cells: analytic.as_ref().map(|a| [(px - a.mean[0]) / grid.dx(), (pp - a.mean[1]) / grid.dp()]),
        covariance_error: analytic.as_ref().map(|a| {
            let mut e: f64 = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    e = e.max((moments.covariance[i][j] - a.covariance[i][j]).abs());
                }
            }
            e
        }),
    };
    Ok(WignerRun { field, analytic, report })
}

/// Writes `wigner.csv`, `analytic.json` and `peak.json` into `dir`.
pub fn write_wigner(dir: &Path, manifest: &ExperimentManifest, run: &WignerRun) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join("wigner.csv"))?);
    run.field.write_csv(&mut w)?;
    std::io::Write::flush(&mut w)?;
    if let Some(a) = &run.analytic {
        write_json(&dir.join("analytic.json"), &a.to_json())?;
    }
    write_json(&dir.join("peak.json"), &run.report)?;
    write_json(&dir.join("manifest.json"), manifest)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellComparison {
    pub cell: String,
    pub kind: DissipatorKind,
    pub nu_minus: f64,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub argmax_t: f64,
    pub violations: usize,
    pub n_compared: usize,
    pub pass: bool,
    /// `"ok"` or `"no-steady-state"` for the Lyapunov-derived fields.
    pub steady_state: String,
    pub steady_covariance: Option<[[f64; 2]; 2]>,
}

/// `comparison.json`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub argmax_t: f64,
    pub pass: bool,
    pub cells: Vec<CellComparison>,
}

pub fn comparison_report(manifest: &ExperimentManifest, outcomes: &[CellOutcome]) -> ComparisonReport {
    let mut rep = ComparisonReport {
        rel_tol: manifest.oracle.rel_tol,
        abs_tol: manifest.oracle.abs_tol,
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        argmax_t: 0.0,
        pass: true,
        cells: Vec::new(),
    };
    for o in outcomes {
        let Some(c) = o.summary.oracle else { continue };
        let cov = steady_covariance(&o.cell.cfg.dissipator);
        let pass = c.violations == 0 && !o.summary.partial;
        rep.pass &= pass;
        if c.max_rel_err > rep.max_rel_err {
            rep.max_rel_err = c.max_rel_err;
            rep.argmax_t = c.argmax_t;
        }
        rep.max_abs_err = rep.max_abs_err.max(c.max_abs_err);
        rep.cells.push(CellComparison {
            cell: o.cell.label.clone(),
            kind: o.summary.kind,
            nu_minus: o.summary.nu_minus,
            max_rel_err: c.max_rel_err,
            max_abs_err: c.max_abs_err,
            argmax_t: c.argmax_t,
            violations: c.violations,
            n_compared: c.n_compared,
            pass,
            steady_state: if cov.is_ok() { "ok" } else { "no-steady-state" }.into(),
            steady_covariance: cov.ok(),
        });
    }
    rep
}

/// Runs every cell with both engines and writes `comparison.json`.
pub fn run_compare_oracle(
    manifest: &ExperimentManifest,
    cells: &[Cell],
    root: &Path,
    workers: usize,
) -> Result<(Vec<CellOutcome>, ComparisonReport), CliError> {
    let opts = EnsembleOptions { workers, quantum: true, oracle: true, keep_final: false };
    let outcomes = run_experiment(manifest, cells, root, &opts)?;
    let report = comparison_report(manifest, &outcomes);
    write_json(&root.join("comparison.json"), &report)?;
    Ok((outcomes, report))
}

