//! Experiment orchestration and result bundles.
//!
//! Workers only compute; every file is written here, on the calling thread,
//! after the ordered reduction.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use qam_core::ensemble::{compare_with_oracle, run_ensemble, EnsembleOptions, EnsembleResult, Failure, OracleComparison};
use qam_core::evolver::Diagnostics;
use qam_core::observables::{fit_scaling_exponent, MsdSeries};
use qam_core::ou::ou_msd_analytic;
use qam_core::{DissipatorKind, SimulationConfig};
use serde::{Deserialize, Serialize};

use crate::config::{Cell, ExperimentManifest, FitSeries, FitWindow};
use crate::error::CliError;

/// Health thresholds for the density-matrix integrator.
pub const TRACE_TOL: f64 = 1e-6;
pub const HERM_TOL: f64 = 1e-10;
pub const PURITY_TOL: f64 = 1e-8;
pub const MIN_EIG_TOL: f64 = -1e-8;
pub const TOP_POP_TOL: f64 = 1e-6;

/// Integrator health over every record of a cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub worst: Diagnostics,
    pub max_purity: f64,
    pub trace_ok: bool,
    pub herm_ok: bool,
    pub purity_ok: bool,
    /// `None` where positivity is not guaranteed (Agarwal): logged only.
    pub min_eig_ok: Option<bool>,
    /// Top-two-level population below threshold; otherwise the run is
    /// flagged.
    pub truncation_ok: bool,
}

impl Health {
    pub fn assess(kind: DissipatorKind, worst: Diagnostics, max_purity: f64) -> Self {
        Self {
            worst,
            max_purity,
            trace_ok: worst.trace_dev <= TRACE_TOL,
            herm_ok: worst.herm_dev <= HERM_TOL,
            purity_ok: max_purity <= 1.0 + PURITY_TOL,
            min_eig_ok: (kind != DissipatorKind::Agarwal).then_some(worst.min_eig >= MIN_EIG_TOL),
            truncation_ok: worst.top_pop < TOP_POP_TOL,
        }
    }

    pub fn pass(&self) -> bool {
        self.trace_ok && self.herm_ok && self.purity_ok && self.min_eig_ok.unwrap_or(true) && self.truncation_ok
    }
}

/// Driving reference against the closed-form OU MSD.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrivingCheck {
    pub n_points: usize,
    /// Points further than three standard errors from the closed form.
    pub n_outside: usize,
    pub max_z: f64,
}

pub fn check_driving(series: &MsdSeries, cfg: &SimulationConfig) -> Result<DrivingCheck, CliError> {
    let mut out = DrivingCheck { n_points: 0, n_outside: 0, max_z: 0.0 };
    for ((&t, &m), &se) in series.times.iter().zip(&series.msd).zip(&series.stderr) {
        if t <= 0.0 || !(se > 0.0) {
            continue;
        }
        let z = (m - ou_msd_analytic(t, &cfg.ou)?).abs() / se;
        out.n_points += 1;
        out.max_z = out.max_z.max(z);
        if z > 3.0 {
            out.n_outside += 1;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub name: String,
    pub series: FitSeries,
    pub window: [f64; 2],
    pub slope: Option<f64>,
    pub slope_err: Option<f64>,
    pub n_points: usize,
    pub expected: Option<f64>,
    pub tolerance: Option<f64>,
    /// `None` without an expectation or when the fit failed.
    pub pass: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn fit_window(series: &MsdSeries, w: &FitWindow) -> FitReport {
    let mut r = FitReport {
        name: w.name.clone(),
        series: w.series,
        window: [w.t_lo, w.t_hi],
        slope: None,
        slope_err: None,
        n_points: 0,
        expected: w.expected,
        tolerance: w.tolerance,
        pass: None,
        error: None,
    };
    match fit_scaling_exponent(series, w.t_lo, w.t_hi) {
        Ok(f) => {
            r.slope = Some(f.slope);
            r.slope_err = Some(f.slope_err);
            r.n_points = f.n_points;
            if let (Some(e), Some(tol)) = (w.expected, w.tolerance) {
                r.pass = Some((f.slope - e).abs() <= tol);
            }
        }
        Err(e) => r.error = Some(e.to_string()),
    }
    r
}

/// `diagnostics.json`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellSummary {
    pub cell: String,
    pub kind: DissipatorKind,
    pub nu_minus: f64,
    pub n_traj: usize,
    pub n_completed: usize,
    pub partial: bool,
    pub failures: Vec<Failure>,
    pub health: Option<Health>,
    pub driving: DrivingCheck,
    pub oracle: Option<OracleComparison>,
}

/// Everything one cell produced.
#[derive(Clone, Debug)]
pub struct CellOutcome {
    pub cell: Cell,
    pub result: EnsembleResult,
    pub summary: CellSummary,
    pub fits: Vec<FitReport>,
}

impl CellOutcome {
    pub fn series(&self, which: FitSeries) -> Option<&MsdSeries> {
        match which {
            FitSeries::Quantum => self.result.quantum.as_ref(),
            FitSeries::Oracle => self.result.oracle.as_ref(),
            FitSeries::Driving => Some(&self.result.driving),
        }
    }
}

/// Runs one cell's ensemble and evaluates it; writes nothing.
pub fn run_cell(manifest: &ExperimentManifest, cell: &Cell, opts: &EnsembleOptions) -> Result<CellOutcome, CliError> {
    let cfg = &cell.cfg;
    let result = run_ensemble(cfg, opts).map_err(|e| match e {
        qam_core::Error::InvalidArgument(m) if m.starts_with("every trajectory failed") => CliError::Numerical(m),
        other => other.into(),
    })?;
    let health = match (result.worst_diagnostics(), result.max_purity()) {
        (Some(w), Some(p)) => Some(Health::assess(cfg.dissipator.kind, w, p)),
        _ => None,
    };
    let oracle = if opts.quantum && opts.oracle {
        Some(compare_with_oracle(&result, manifest.oracle.rel_tol, manifest.oracle.abs_tol)?)
    } else {
        None
    };
    let summary = CellSummary {
        cell: cell.label.clone(),
        kind: cfg.dissipator.kind,
        nu_minus: cfg.dissipator.thermal.nu_minus,
        n_traj: cfg.n_traj,
        n_completed: result.outcomes.len(),
        partial: result.is_partial(),
        failures: result.failures.clone(),
        health,
        driving: check_driving(&result.driving, cfg)?,
        oracle,
    };
    let mut outcome = CellOutcome { cell: cell.clone(), result, summary, fits: Vec::new() };
    outcome.fits = manifest
        .fits_for(cfg)
        .iter()
        .filter_map(|w| outcome.series(w.series).map(|s| fit_window(s, w)))
        .collect();
    Ok(outcome)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(std::io::Error::from)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub const PARTIAL_MARKER: &str = "PARTIAL";

/// Writes a cell's bundle into `dir`.
pub fn write_cell(dir: &Path, manifest: &ExperimentManifest, outcome: &CellOutcome) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    let r = &outcome.result;
    if let Some(q) = &r.quantum {
        let mut w = create(&dir.join("msd_quantum.csv"))?;
        q.write_csv(&mut w)?;
        w.flush()?;
    }
    if let Some(o) = &r.oracle {
        let mut w = create(&dir.join("msd_oracle.csv"))?;
        o.write_csv_with_source(&mut w, "oracle")?;
        w.flush()?;
    }
    let mut w = create(&dir.join("msd_driving.csv"))?;
    r.driving.write_csv(&mut w)?;
    w.flush()?;
    write_json(&dir.join("diagnostics.json"), &outcome.summary)?;
    write_json(&dir.join("fits.json"), &outcome.fits)?;
    write_json(&dir.join("manifest.json"), manifest)?;
    let marker = dir.join(PARTIAL_MARKER);
    if outcome.summary.partial {
        fs::write(&marker, format!("{} of {} trajectories aborted\n", outcome.summary.failures.len(), outcome.summary.n_traj))?;
    } else if marker.exists() {
        fs::remove_file(marker)?;
    }
    Ok(())
}

/// Runs and writes every cell under `root`; the manifest is written first
/// so it survives an abort.
pub fn run_experiment(
    manifest: &ExperimentManifest,
    cells: &[Cell],
    root: &Path,
    opts: &EnsembleOptions,
) -> Result<Vec<CellOutcome>, CliError> {
    fs::create_dir_all(root)?;
    write_json(&root.join("manifest.json"), manifest)?;
    let mut out = Vec::with_capacity(cells.len());
    for cell in cells {
        log::info!("cell {}: {} trajectories to t = {}", cell.label, cell.cfg.n_traj, cell.cfg.t_final);
        let outcome = run_cell(manifest, cell, opts)?;
        write_cell(&root.join(&cell.label), manifest, &outcome)?;
        out.push(outcome);
    }
    Ok(out)
}

/// Error when any cell lost trajectories.
pub fn check_partial(outcomes: &[CellOutcome]) -> Result<(), CliError> {
    let lost: Vec<String> = outcomes
        .iter()
        .filter(|o| o.summary.partial)
        .map(|o| format!("{} ({} aborted)", o.cell.label, o.summary.failures.len()))
        .collect();
    if lost.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numerical(format!("partial results: {}", lost.join(", "))))
    }
}

/// Reads an MSD CSV written by [`write_cell`].
pub fn read_msd_csv(path: &Path) -> Result<MsdSeries, CliError> {
    let file = File::open(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if !header.starts_with("t,msd,stderr,n_traj") {
        return Err(CliError::Config(format!("{}: unexpected header `{header}`", path.display())));
    }
    let mut s = MsdSeries { times: Vec::new(), msd: Vec::new(), stderr: Vec::new(), n_traj: 0 };
    for (i, line) in lines.enumerate() {
        let line = line?;
        let cols: Vec<&str> = line.split(',').collect();
        let bad = || CliError::Config(format!("{}: line {}: malformed row", path.display(), i + 2));
        if cols.len() < 4 {
            return Err(bad());
        }
        let num = |k: usize| cols[k].parse::<f64>().map_err(|_| bad());
        s.times.push(num(0)?);
        s.msd.push(num(1)?);
        s.stderr.push(num(2)?);
        s.n_traj = cols[3].parse().map_err(|_| bad())?;
    }
    Ok(s)
}

/// Applies the manifest's windows to the CSVs of a finished cell directory.
pub fn fit_directory(dir: &Path, manifest: &ExperimentManifest) -> Result<Vec<FitReport>, CliError> {
    let cell_manifest: ExperimentManifest = match fs::read_to_string(dir.join("manifest.json")) {
        Ok(t) => serde_json::from_str(&t).map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?,
        Err(_) => manifest.clone(),
    };
    let label = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let cfg = cell_manifest
        .cells()?
        .into_iter()
        .find(|c| c.label == label)
        .map(|c| c.cfg)
        .unwrap_or_else(|| cell_manifest.cfg.clone());
    let windows = if manifest.fits.is_empty() { cell_manifest.fits_for(&cfg) } else { manifest.fits.clone() };
    let mut out = Vec::new();
    for w in &windows {
        let path = dir.join(w.series.file_name());
        if path.exists() {
            out.push(fit_window(&read_msd_csv(&path)?, w));
        }
    }
    Ok(out)
}

/// Cell directories below `root`, sorted by name.
pub fn cell_dirs(root: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| CliError::Config(format!("{}: {e}", root.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.join("msd_driving.csv").exists())
        .collect();
    dirs.sort();
    Ok(dirs)
}

/// gnuplot script plotting every cell's MSD series on log-log axes.
pub fn plot_script(root: &Path) -> Result<String, CliError> {
    let mut s = String::from(
        "# Usage: gnuplot plots.gp\nset datafile separator ','\nset logscale xy\nset key top left\n\
         set xlabel 't'\nset ylabel 'MSD'\nset terminal pngcairo size 900,650\n",
    );
    for dir in cell_dirs(root)? {
        let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        s.push_str(&format!("\nset output '{name}.png'\nset title '{name}'\nplot \\\n"));
        let mut parts = Vec::new();
        for (file, title) in [("msd_driving.csv", "x_c^2"), ("msd_quantum.csv", "quantum"), ("msd_oracle.csv", "oracle")] {
            if dir.join(file).exists() {
                let style = if file == "msd_driving.csv" { "lines lc rgb 'black'" } else { "lines" };
                parts.push(format!("  '{name}/{file}' using 1:($2>0?$2:1/0) skip 1 with {style} title '{title}'"));
            }
        }
        s.push_str(&parts.join(", \\\n"));
        s.push('\n');
    }
    Ok(s)
}
