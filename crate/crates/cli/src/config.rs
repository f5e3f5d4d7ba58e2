//! Experiment files and manifests.
//!
//! An experiment file is TOML with dotted sections (or the same schema as
//! JSON, chosen by the `.json` extension). Every key is optional; omitted
//! keys take the published defaults. Unknown keys are rejected.
//!
//! ```toml
//! name = "weak-translated"
//!
//! [simulation]
//! dt = 1e-3
//! t_final = 50.0
//! n_traj = 20
//!
//! [dissipator]
//! kind = "translated_lindblad"
//! nu_minus = 1e-2
//!
//! [[sweep]]
//! path = "dissipator.nu_minus"
//! values = [1e-2, 1.0, 10.0]
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use qam_core::evolver::{Frame, SimulationConfig};
use qam_core::moments::ForceExponent;
use qam_core::wigner::PhaseSpaceGrid;
use qam_core::{DissipatorKind, DissipatorSpec, OuParams, ThermalParams};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// `[simulation]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub dt: f64,
    pub t_final: f64,
    pub dim: usize,
    pub n_traj: usize,
    pub base_seed: u64,
    pub record_stride: Option<usize>,
    pub log_records_per_decade: Option<usize>,
    pub force_exponent: ForceExponent,
    pub corrector_midpoint: bool,
    pub eig_every_records: usize,
    /// `displaced` (default) or `lab`.
    pub frame: Frame,
}

impl Default for SimulationSection {
    fn default() -> Self {
        let d = SimulationConfig::default();
        Self {
            dt: d.dt,
            t_final: d.t_final,
            dim: d.dim,
            n_traj: d.n_traj,
            base_seed: d.base_seed,
            record_stride: d.record_stride,
            log_records_per_decade: Some(DEFAULT_LOG_RECORDS),
            force_exponent: d.force_exponent,
            corrector_midpoint: d.corrector_midpoint,
            eig_every_records: d.eig_every_records,
            frame: d.frame,
        }
    }
}

/// Log-spaced records per decade unless configured; enough for every
/// default fit window to hold ten points.
pub const DEFAULT_LOG_RECORDS: usize = 20;

/// `[dissipator]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DissipatorSection {
    pub kind: DissipatorKind,
    pub nu_plus: f64,
    pub nu_minus: f64,
}

impl Default for DissipatorSection {
    fn default() -> Self {
        Self { kind: DissipatorKind::StaticLindblad, nu_plus: 1e-8, nu_minus: 1e-2 }
    }
}

/// `[driving]`: the trap-center process.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DrivingSection {
    pub tau: f64,
    pub diff: f64,
}

impl Default for DrivingSection {
    fn default() -> Self {
        let d = OuParams::default();
        Self { tau: d.tau, diff: d.diff }
    }
}

/// One swept parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    /// One of [`SWEEP_PATHS`].
    pub path: String,
    pub values: Vec<SweepValue>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SweepValue {
    Number(f64),
    Text(String),
}

impl fmt::Display for SweepValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SweepValue::Number(v) => write!(f, "{v}"),
            SweepValue::Text(s) => f.write_str(s),
        }
    }
}

pub const SWEEP_PATHS: [&str; 5] =
    ["dissipator.kind", "dissipator.nu_minus", "dissipator.nu_plus", "driving.tau", "driving.diff"];

/// Which MSD series a fit reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitSeries {
    Quantum,
    Oracle,
    Driving,
}

impl FitSeries {
    pub fn file_name(self) -> &'static str {
        match self {
            FitSeries::Quantum => "msd_quantum.csv",
            FitSeries::Oracle => "msd_oracle.csv",
            FitSeries::Driving => "msd_driving.csv",
        }
    }
}

/// A log-log fit window, optionally with an expected slope for check mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitWindow {
    pub name: String,
    pub series: FitSeries,
    pub t_lo: f64,
    pub t_hi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
}

impl FitWindow {
    fn new(name: &str, series: FitSeries, t_lo: f64, t_hi: f64, expected: f64, tolerance: f64) -> Self {
        Self { name: name.into(), series, t_lo, t_hi, expected: Some(expected), tolerance: Some(tolerance) }
    }
}

/// Weak dissipation: `nu_- <= WEAK_MAX`; strong: `nu_- >= STRONG_MIN`.
pub const WEAK_MAX: f64 = 0.1;
pub const STRONG_MIN: f64 = 5.0;

/// Fit windows for a cell when the file configures none.
///
/// The MSD windows sit where the local log-log slope of the moment
/// equations is flat: between the thermal floor and the crossover to the
/// driving-dominated regime.
pub fn default_fits(cfg: &SimulationConfig) -> Vec<FitWindow> {
    use DissipatorKind::*;
    use FitSeries::*;
    let kind = cfg.dissipator.kind;
    let nu = cfg.dissipator.thermal.nu_minus;
    let mut out = vec![FitWindow::new("driving_short", Driving, 0.1, 1.0, 3.0, 0.2)];
    if cfg.t_final >= 500.0 {
        out.push(FitWindow::new("driving_long", Driving, 200.0, 500.0, 1.0, 0.15));
    }
    match kind {
        TranslatedLindblad if nu <= WEAK_MAX => out.push(FitWindow::new("underdamped", Quantum, 0.6, 2.0, 6.0, 0.7)),
        TranslatedLindblad if nu >= STRONG_MIN => out.push(FitWindow::new("overdamped", Quantum, 0.1, 0.4, 4.0, 0.5)),
        Agarwal => out.push(FitWindow::new("short", Quantum, 0.005, 0.05, 3.0, 0.3)),
        _ => {}
    }
    if kind != StaticLindblad && cfg.t_final >= 500.0 {
        out.push(FitWindow::new("long", Quantum, 200.0, 500.0, 1.0, 0.2));
    }
    out.retain(|w| w.t_hi <= cfg.t_final);
    out
}

/// `[wigner.grid]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub x_min: f64,
    pub x_max: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub n_x: usize,
    pub n_p: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        let g = PhaseSpaceGrid::default();
        Self { x_min: g.x_min, x_max: g.x_max, p_min: g.p_min, p_max: g.p_max, n_x: g.n_x, n_p: g.n_p }
    }
}

impl GridSection {
    pub fn grid(&self) -> qam_core::Result<PhaseSpaceGrid> {
        PhaseSpaceGrid::new((self.x_min, self.x_max), (self.p_min, self.p_max), self.n_x, self.n_p)
    }
}

/// `[wigner]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WignerSection {
    pub x_c: f64,
    /// Relaxation time; `None` derives it from the slowest drift rate.
    pub t_relax: Option<f64>,
    pub grid: GridSection,
}

impl Default for WignerSection {
    fn default() -> Self {
        Self { x_c: 3.0, t_relax: None, grid: GridSection::default() }
    }
}

/// `[oracle]`: tolerances of the density-matrix vs moment comparison.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self { rel_tol: 1e-3, abs_tol: 1e-6 }
    }
}

/// The file schema.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentFile {
    pub name: Option<String>,
    pub out: Option<PathBuf>,
    pub simulation: SimulationSection,
    pub dissipator: DissipatorSection,
    pub driving: DrivingSection,
    pub sweep: Vec<SweepAxis>,
    /// Replaces the default windows when nonempty.
    pub fit: Vec<FitWindow>,
    pub wigner: WignerSection,
    pub oracle: OracleSection,
}

/// A validated experiment: the file plus its resolved configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub name: String,
    pub cfg: SimulationConfig,
    pub sweep: Vec<SweepAxis>,
    pub outputs: PathBuf,
    pub fits: Vec<FitWindow>,
    pub wigner: WignerSection,
    pub oracle: OracleSection,
    pub created: String,
    pub code_version: String,
}

pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// One point of the sweep grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    /// Directory name, unique within the sweep.
    pub label: String,
    pub cfg: SimulationConfig,
}

impl ExperimentFile {
    pub fn parse_str(text: &str, json: bool) -> Result<Self, String> {
        if json {
            serde_json::from_str(text).map_err(|e| e.to_string())
        } else {
            toml::from_str(text).map_err(|e| e.to_string())
        }
    }

    /// Resolves and validates into a manifest.
    pub fn into_manifest(self) -> Result<ExperimentManifest, CliError> {
        let s = &self.simulation;
        let d = &self.dissipator;
        let thermal = ThermalParams::new(d.nu_plus, d.nu_minus).map_err(|e| CliError::Config(format!("[dissipator]: {e}")))?;
        let ou = OuParams::new(self.driving.tau, self.driving.diff).map_err(|e| CliError::Config(format!("[driving]: {e}")))?;
        let cfg = SimulationConfig {
            dt: s.dt,
            t_final: s.t_final,
            dim: s.dim,
            n_traj: s.n_traj,
            base_seed: s.base_seed,
            record_stride: s.record_stride,
            log_records_per_decade: s.log_records_per_decade,
            dissipator: DissipatorSpec::new(d.kind, thermal),
            ou,
            force_exponent: s.force_exponent,
            corrector_midpoint: s.corrector_midpoint,
            eig_every_records: s.eig_every_records,
            frame: s.frame,
        };
        cfg.validate().map_err(|e| CliError::Config(format!("[simulation]: {e}")))?;
        let name = self.name.unwrap_or_else(|| "experiment".into());
        if name.trim().is_empty() {
            return Err(CliError::Config("name must be nonempty".into()));
        }
        for w in &self.fit {
            if !(w.t_lo > 0.0 && w.t_hi > w.t_lo && w.t_hi.is_finite()) {
                return Err(CliError::Config(format!("fit `{}`: need 0 < t_lo < t_hi", w.name)));
            }
        }
        self.wigner.grid.grid().map_err(|e| CliError::Config(format!("[wigner.grid]: {e}")))?;
        let outputs = self.out.unwrap_or_else(|| PathBuf::from("runs").join(&name));
        let m = ExperimentManifest {
            name,
            cfg,
            sweep: self.sweep,
            outputs,
            fits: self.fit,
            wigner: self.wigner,
            oracle: self.oracle,
            created: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            code_version: CODE_VERSION.into(),
        };
        m.cells()?;
        Ok(m)
    }
}

/// Reads and validates an experiment file.
pub fn parse_config(path: &Path) -> Result<ExperimentManifest, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let file = ExperimentFile::parse_str(&text, json).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    file.into_manifest()
}

fn number(axis: &SweepAxis, v: &SweepValue) -> Result<f64, CliError> {
    match v {
        SweepValue::Number(x) => Ok(*x),
        SweepValue::Text(s) => Err(CliError::Config(format!("sweep `{}`: expected a number, got \"{s}\"", axis.path))),
    }
}

fn apply(cfg: &mut SimulationConfig, axis: &SweepAxis, v: &SweepValue) -> Result<(), CliError> {
    let th = cfg.dissipator.thermal;
    let bad = |e: qam_core::Error| CliError::Config(format!("sweep `{}` = {v}: {e}", axis.path));
    match axis.path.as_str() {
        "dissipator.kind" => {
            cfg.dissipator.kind = match v {
                SweepValue::Text(s) => s.parse().map_err(|e: qam_core::Error| bad(e))?,
                SweepValue::Number(_) => return Err(CliError::Config(format!("sweep `{}`: expected a kind name", axis.path))),
            }
        }
        "dissipator.nu_minus" => cfg.dissipator.thermal = ThermalParams::new(th.nu_plus, number(axis, v)?).map_err(bad)?,
        "dissipator.nu_plus" => cfg.dissipator.thermal = ThermalParams::new(number(axis, v)?, th.nu_minus).map_err(bad)?,
        "driving.tau" => cfg.ou = OuParams::new(number(axis, v)?, cfg.ou.diff).map_err(bad)?,
        "driving.diff" => cfg.ou = OuParams::new(cfg.ou.tau, number(axis, v)?).map_err(bad)?,
        other => {
            return Err(CliError::Config(format!("unknown sweep path `{other}`; expected one of {}", SWEEP_PATHS.join(", "))))
        }
    }
    Ok(())
}

/// Directory name of a `(kind, nu_-)` cell, plus any other swept values.
pub fn cell_label(cfg: &SimulationConfig, extra: &[(String, String)]) -> String {
    let mut label = format!("{}_nu-{}", cfg.dissipator.kind.short_name(), cfg.dissipator.thermal.nu_minus);
    for (k, v) in extra {
        label.push_str(&format!("_{k}-{v}"));
    }
    label
}

impl ExperimentManifest {
    /// The configuration without any sweep applied.
    pub fn base_cell(&self) -> Cell {
        Cell { label: cell_label(&self.cfg, &[]), cfg: self.cfg.clone() }
    }

    /// Cartesian product of the sweep axes, first axis slowest.
    pub fn cells(&self) -> Result<Vec<Cell>, CliError> {
        let mut cells = vec![(self.cfg.clone(), Vec::<(String, String)>::new())];
        for axis in &self.sweep {
            if axis.values.is_empty() {
                return Err(CliError::Config(format!("sweep `{}` has no values", axis.path)));
            }
            let leaf = axis.path.rsplit('.').next().unwrap_or(&axis.path).to_string();
            let keyed = !matches!(axis.path.as_str(), "dissipator.kind" | "dissipator.nu_minus");
            let mut next = Vec::with_capacity(cells.len() * axis.values.len());
            for (cfg, extra) in &cells {
                for v in &axis.values {
                    let mut c = cfg.clone();
                    apply(&mut c, axis, v)?;
                    c.validate().map_err(|e| CliError::Config(format!("sweep `{}` = {v}: {e}", axis.path)))?;
                    let mut e = extra.clone();
                    if keyed {
                        e.push((leaf.clone(), v.to_string()));
                    }
                    next.push((c, e));
                }
            }
            cells = next;
        }
        let out: Vec<Cell> = cells.into_iter().map(|(cfg, extra)| Cell { label: cell_label(&cfg, &extra), cfg }).collect();
        for (i, a) in out.iter().enumerate() {
            if out[..i].iter().any(|b| b.label == a.label) {
                return Err(CliError::Config(format!("sweep produces duplicate cell `{}`", a.label)));
            }
        }
        Ok(out)
    }

    /// Configured windows, or the defaults for the cell.
    pub fn fits_for(&self, cfg: &SimulationConfig) -> Vec<FitWindow> {
        if self.fits.is_empty() {
            default_fits(cfg)
        } else {
            self.fits.clone()
        }
    }

    /// Paper-default manifest, as produced by an empty file.
    pub fn defaults() -> Self {
        ExperimentFile::default().into_manifest().expect("defaults are valid")
    }
}
