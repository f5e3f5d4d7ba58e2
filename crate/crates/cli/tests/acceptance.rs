//! Acceptance suite: one pass/fail line per criterion.
//!
//! Runs the full published parameter set, so it takes tens of minutes on a
//! single core. Exits nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::time::Instant;

use qam_cli::commands::{run_compare_oracle, run_wigner, WignerRun};
use qam_cli::config::{ExperimentFile, SweepAxis, SweepValue};
use qam_cli::runner::{check_partial, run_experiment, CellOutcome, FitReport, Health};
use qam_cli::{resolve_workers, ExperimentManifest, WORKERS_ENV};
use qam_core::ensemble::EnsembleOptions;
use qam_core::evolver::evolve;
use qam_core::fock::ground_state;
use qam_core::moments::{fpe_coefficients, steady_covariance, steady_mean};
use qam_core::ou::ou_msd_analytic;
use qam_core::wigner::wigner_from_density;
use qam_core::{DensityMatrix, DissipatorKind, DissipatorSpec, OuTrajectory, PhaseSpaceGrid, SimulationConfig, ThermalParams};

type Check = Result<(bool, String), String>;

const NU_PLUS: f64 = 1e-8;
const WEAK: f64 = 1e-2;
const MID: f64 = 1.0;
const STRONG: f64 = 10.0;
const KINDS: [DissipatorKind; 3] = DissipatorKind::ALL;
/// Truncation for weak-damping steady states. The packet swings out to about
/// `2 x_c`, but the displaced frame keeps the stored state near the origin.
const WIDE_DIM: usize = 24;

struct Suite {
    root: tempfile::TempDir,
    workers: usize,
    health: Vec<(String, Health)>,
    started: Instant,
}

impl Suite {
    fn progress(&self, msg: &str) {
        eprintln!("[{:>7.1}s] {msg}", self.started.elapsed().as_secs_f64());
    }

    fn dir(&self, name: &str) -> std::path::PathBuf {
        self.root.path().join(name)
    }

    fn opts(&self, workers: usize) -> EnsembleOptions {
        EnsembleOptions { workers, quantum: true, oracle: true, keep_final: false }
    }

    fn record(&mut self, outcomes: &[CellOutcome], tag: &str) {
        for o in outcomes {
            if let Some(h) = o.summary.health {
                self.health.push((format!("{tag}/{}", o.cell.label), h));
            }
        }
    }
}

fn manifest(f: impl FnOnce(&mut ExperimentFile)) -> Result<ExperimentManifest, String> {
    let mut file = ExperimentFile::default();
    file.dissipator.nu_plus = NU_PLUS;
    f(&mut file);
    file.into_manifest().map_err(|e| e.to_string())
}

fn kind_axis(kinds: &[DissipatorKind]) -> SweepAxis {
    SweepAxis { path: "dissipator.kind".into(), values: kinds.iter().map(|k| SweepValue::Text(k.short_name().into())).collect() }
}

fn nu_axis(nus: &[f64]) -> SweepAxis {
    SweepAxis { path: "dissipator.nu_minus".into(), values: nus.iter().map(|&v| SweepValue::Number(v)).collect() }
}

fn fit<'a>(o: &'a CellOutcome, name: &str) -> Result<&'a FitReport, String> {
    o.fits.iter().find(|f| f.name == name).ok_or_else(|| format!("{}: no `{name}` fit", o.cell.label))
}

fn fit_line(o: &CellOutcome, f: &FitReport) -> (bool, String) {
    let ok = f.pass == Some(true);
    let slope = f.slope.map_or_else(|| f.error.clone().unwrap_or_default(), |s| format!("{s:.3}"));
    (ok, format!("{} {} [{}, {}] slope {slope} (want {} ± {})", o.cell.label, f.name, f.window[0], f.window[1], f.expected.unwrap_or(f64::NAN), f.tolerance.unwrap_or(f64::NAN)))
}

/// Oracle equivalence on the full kind x strength grid.
fn criterion_1(s: &mut Suite) -> Check {
    let m = manifest(|f| {
        f.simulation.t_final = 50.0;
        f.simulation.n_traj = 20;
        f.sweep = vec![kind_axis(&KINDS), nu_axis(&[WEAK, MID, STRONG])];
    })?;
    let cells = m.cells().map_err(|e| e.to_string())?;
    let (outcomes, rep) = run_compare_oracle(&m, &cells, &s.dir("c1"), s.workers).map_err(|e| e.to_string())?;
    s.record(&outcomes, "c1");
    check_partial(&outcomes).map_err(|e| e.to_string())?;
    let worst = rep.cells.iter().map(|c| c.violations).sum::<usize>();
    let compared = rep.cells.iter().map(|c| c.n_compared).sum::<usize>();
    Ok((
        rep.pass && rep.cells.len() == 9,
        format!("{} cells, {compared} values, {worst} outside 1e-3 rel / 1e-6 abs; max abs err {:.2e}", rep.cells.len(), rep.max_abs_err),
    ))
}

fn wigner(s: &mut Suite, kind: DissipatorKind, nu: f64, dim: usize, t_relax: Option<f64>) -> Result<WignerRun, String> {
    let m = manifest(|f| {
        f.dissipator.kind = kind;
        f.dissipator.nu_minus = nu;
        f.simulation.dim = dim;
    })?;
    let run = run_wigner(&m, 3.0, t_relax).map_err(|e| format!("{kind} nu_-={nu}: {e}"))?;
    s.health.push((format!("wigner/{}_nu-{nu}", kind.short_name()), run.report.health));
    s.progress(&format!("relaxed {kind} nu_-={nu} to t = {:.0}", run.report.t_relax));
    Ok(run)
}

/// Static Lindblad displacement of the steady state.
fn criterion_2(s: &mut Suite) -> Check {
    use DissipatorKind::StaticLindblad as K;
    let strong = wigner(s, K, STRONG, 24, Some(10.0))?;
    let [x, p] = strong.report.state.mean;
    let strong_ok = (x - 0.11538).abs() <= 1e-3 && (p - 0.57692).abs() <= 1e-3;
    let weak = wigner(s, K, WEAK, WIDE_DIM, Some(2000.0))?;
    let xw = weak.report.state.mean[0];
    let spec = DissipatorSpec::new(K, ThermalParams::new(NU_PLUS, WEAK).map_err(|e| e.to_string())?);
    let fixed = steady_mean(&fpe_coefficients(&spec), 3.0).map_err(|e| e.to_string())?;
    let weak_ok = (xw - 2.99993).abs() <= 1e-3 && (fixed[0] - 2.99993).abs() <= 1e-3;
    Ok((
        strong_ok && weak_ok,
        format!(
            "strong t=10: <x> = {x:.5}, <p> = {p:.5}; weak t=2000 (N={WIDE_DIM}): <x> = {xw:.5}, oracle fixed point {:.5}",
            fixed[0]
        ),
    ))
}

/// Translated Lindblad and Agarwal steady states.
fn criterion_3(s: &mut Suite) -> Check {
    let mut ok = true;
    let mut parts = Vec::new();
    for (nu, dim) in [(STRONG, 24), (WEAK, WIDE_DIM)] {
        let th = ThermalParams::new(NU_PLUS, nu).map_err(|e| e.to_string())?;
        let target = th.nbar + 0.5;
        for kind in [DissipatorKind::TranslatedLindblad, DissipatorKind::Agarwal] {
            let run = wigner(s, kind, nu, dim, None)?;
            let r = &run.report;
            let peak_ok = (r.peak[0] - 3.0).abs() <= 2.0 * r.grid_spacing[0] && r.peak[1].abs() <= 2.0 * r.grid_spacing[1];
            let c = r.field.covariance;
            let cov_err = [(c[0][0] - target).abs(), (c[1][1] - target).abs(), c[0][1].abs()].into_iter().fold(0.0, f64::max);
            ok &= peak_ok && cov_err <= 1e-3;
            parts.push(format!(
                "{} nu_-={nu}: peak ({:.4}, {:.4}), cov err {cov_err:.1e}",
                kind.short_name(),
                r.peak[0],
                r.peak[1]
            ));
        }
        let a = steady_covariance(&DissipatorSpec::new(DissipatorKind::TranslatedLindblad, th)).map_err(|e| e.to_string())?;
        let b = steady_covariance(&DissipatorSpec::new(DissipatorKind::Agarwal, th)).map_err(|e| e.to_string())?;
        let d = (0..2).flat_map(|i| (0..2).map(move |j| (i, j))).map(|(i, j)| (a[i][j] - b[i][j]).abs()).fold(0.0, f64::max);
        ok &= d <= 1e-9;
        parts.push(format!("nu_-={nu}: steady covariances differ by {d:.1e}"));
    }
    Ok((ok, parts.join("; ")))
}

/// Driving protocol: slopes and agreement with the closed form.
fn criterion_4(s: &mut Suite) -> Check {
    let m = manifest(|f| {
        f.simulation.t_final = 500.0;
        f.simulation.n_traj = 200;
    })?;
    let opts = EnsembleOptions { workers: s.workers, quantum: false, oracle: false, keep_final: false };
    let out = run_experiment(&m, &[m.base_cell()], &s.dir("c4"), &opts).map_err(|e| e.to_string())?;
    let o = &out[0];
    let short = fit(o, "driving_short")?;
    let long = fit(o, "driving_long")?;
    let d = o.summary.driving;
    let (a, la) = fit_line(o, short);
    let (b, lb) = fit_line(o, long);
    // Spot value of the closed form, for the record.
    let at500 = ou_msd_analytic(500.0, &m.cfg.ou).map_err(|e| e.to_string())?;
    Ok((
        a && b && d.n_outside == 0 && d.n_points > 0,
        format!("{la}; {lb}; {} of {} points beyond 3 stderr of the closed form (max z {:.2}, MSD(500) = {at500:.3})", d.n_outside, d.n_points, d.max_z),
    ))
}

/// Quantum MSD regimes.
fn criterion_5(s: &mut Suite) -> Check {
    let mut lines = Vec::new();
    let mut ok = true;
    let mut check = |o: &CellOutcome, name: &str, lines: &mut Vec<String>| -> Result<(), String> {
        let (pass, line) = fit_line(o, fit(o, name)?);
        ok &= pass;
        lines.push(line);
        Ok(())
    };
    // (a) weak translated, intermediate window
    let a = manifest(|f| {
        f.dissipator.kind = DissipatorKind::TranslatedLindblad;
        f.dissipator.nu_minus = WEAK;
        f.simulation.t_final = 3.0;
    })?;
    let out = run_experiment(&a, &[a.base_cell()], &s.dir("c5a"), &s.opts(s.workers)).map_err(|e| e.to_string())?;
    s.record(&out, "c5a");
    check(&out[0], "underdamped", &mut lines)?;
    s.progress("5(a) done");
    // (c) Agarwal weak and intermediate, short-time window
    let c = manifest(|f| {
        f.dissipator.kind = DissipatorKind::Agarwal;
        f.simulation.t_final = 1.0;
        f.sweep = vec![nu_axis(&[WEAK, MID])];
    })?;
    let out = run_experiment(&c, &c.cells().map_err(|e| e.to_string())?, &s.dir("c5c"), &s.opts(s.workers)).map_err(|e| e.to_string())?;
    s.record(&out, "c5c");
    for o in &out {
        check(o, "short", &mut lines)?;
    }
    s.progress("5(c) weak/intermediate done");
    // (b), (c) strong and (d): long strong-dissipation runs
    let long = manifest(|f| {
        f.dissipator.nu_minus = STRONG;
        f.simulation.t_final = 500.0;
        f.simulation.n_traj = 200;
        f.sweep = vec![kind_axis(&[DissipatorKind::TranslatedLindblad, DissipatorKind::Agarwal])];
    })?;
    let cells = long.cells().map_err(|e| e.to_string())?;
    let mut outs = Vec::new();
    for cell in &cells {
        let o = run_experiment(&long, std::slice::from_ref(cell), &s.dir("c5d"), &s.opts(s.workers)).map_err(|e| e.to_string())?;
        s.progress(&format!("long run {} done", cell.label));
        outs.extend(o);
    }
    s.record(&outs, "c5d");
    check_partial(&outs).map_err(|e| e.to_string())?;
    check(&outs[0], "overdamped", &mut lines)?;
    check(&outs[1], "short", &mut lines)?;
    for o in &outs {
        check(o, "long", &mut lines)?;
    }
    Ok((ok, lines.join("; ")))
}

/// Integrator health over every quantum run of the suite.
fn criterion_6(s: &Suite) -> Check {
    let mut bad = Vec::new();
    let mut agarwal_min: f64 = f64::INFINITY;
    let (mut tr, mut herm, mut pur, mut top): (f64, f64, f64, f64) = (0.0, 0.0, f64::NEG_INFINITY, 0.0);
    let mut lind_min: f64 = f64::INFINITY;
    for (name, h) in &s.health {
        if !h.pass() {
            bad.push(format!("{name} {:?}", h));
        }
        tr = tr.max(h.worst.trace_dev);
        herm = herm.max(h.worst.herm_dev);
        pur = pur.max(h.max_purity);
        top = top.max(h.worst.top_pop);
        match h.min_eig_ok {
            Some(_) => lind_min = lind_min.min(h.worst.min_eig),
            None => agarwal_min = agarwal_min.min(h.worst.min_eig),
        }
    }
    let detail = format!(
        "{} runs: max |Tr-1| {tr:.1e}, max herm dev {herm:.1e}, max purity-1 {:.1e}, Lindblad min eig {lind_min:.1e}, \
         max top-two population {top:.1e}; Agarwal min eig (logged) {agarwal_min:.1e}{}",
        s.health.len(),
        pur - 1.0,
        if bad.is_empty() { String::new() } else { format!("; flagged: {}", bad.join(" | ")) }
    );
    Ok((bad.is_empty() && !s.health.is_empty(), detail))
}

/// Step-halving self-convergence of `<x^2>(t = 1)`.
fn criterion_7(_: &mut Suite) -> Check {
    let mut ok = true;
    let mut parts = Vec::new();
    for kind in KINDS {
        let mut x2 = Vec::new();
        for dt in [4e-3, 2e-3, 1e-3] {
            let cfg = SimulationConfig {
                dt,
                t_final: 1.0,
                n_traj: 1,
                dissipator: DissipatorSpec::new(kind, ThermalParams::new(NU_PLUS, MID).map_err(|e| e.to_string())?),
                ..Default::default()
            };
            let path = OuTrajectory::fixed(1.0, dt, 1.0).map_err(|e| e.to_string())?;
            let series = evolve(&path, &cfg).map_err(|e| e.to_string())?;
            let last = series.records.last().ok_or("no records")?;
            if (last.t - 1.0).abs() > 1e-12 {
                return Err(format!("last record at t = {}", last.t));
            }
            x2.push(last.mean_x2);
        }
        let ratio = (x2[0] - x2[1]) / (x2[1] - x2[2]);
        ok &= (ratio - 4.0).abs() <= 0.5;
        parts.push(format!("{}: {ratio:.3}", kind.short_name()));
    }
    Ok((ok, format!("error ratios at dt = 4e-3, 2e-3, 1e-3: {}", parts.join(", "))))
}

/// Wigner transform of Fock states.
fn criterion_8(_: &mut Suite) -> Check {
    let grid = PhaseSpaceGrid::default();
    let g = wigner_from_density(&ground_state(24).map_err(|e| e.to_string())?, &grid).map_err(|e| e.to_string())?;
    let mut err: f64 = 0.0;
    for i in 0..grid.n_x {
        for j in 0..grid.n_p {
            let (x, p) = (grid.x(i), grid.p(j));
            err = err.max((g.at(i, j) - (-x * x - p * p).exp() / PI).abs());
        }
    }
    let norm = g.normalization();
    // A grid with a node at the origin.
    let small = PhaseSpaceGrid::new((-1.0, 1.0), (-1.0, 1.0), 17, 17).map_err(|e| e.to_string())?;
    let one = wigner_from_density(&DensityMatrix::number_state(24, 1).map_err(|e| e.to_string())?, &small).map_err(|e| e.to_string())?;
    let w00 = one.at(8, 8);
    let ok = err <= 1e-6 && (norm - 1.0).abs() <= 1e-3 && (w00 + 1.0 / PI).abs() <= 1e-6;
    Ok((ok, format!("ground max err {err:.1e}, normalization {norm:.8}, W_1(0,0) + 1/pi = {:.1e}", w00 + 1.0 / PI)))
}

fn csv_files(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

/// Byte-identical outputs for one and eight workers.
fn criterion_9(s: &mut Suite) -> Check {
    let m = manifest(|f| {
        f.simulation.t_final = 50.0;
        f.simulation.n_traj = 20;
        f.dissipator.kind = DissipatorKind::TranslatedLindblad;
        f.dissipator.nu_minus = MID;
    })?;
    let mut trees = Vec::new();
    for workers in [1, 8] {
        let root = s.dir(&format!("c9_w{workers}"));
        let out = run_experiment(&m, &[m.base_cell()], &root, &s.opts(workers)).map_err(|e| e.to_string())?;
        s.record(&out, &format!("c9_w{workers}"));
        trees.push(root);
    }
    let files = csv_files(&trees[0]);
    if files.is_empty() || files != csv_files(&trees[1]) {
        return Ok((false, "CSV file sets differ".into()));
    }
    let mut differ = Vec::new();
    let mut bytes = 0;
    for f in &files {
        let a = fs::read(trees[0].join(f)).map_err(|e| e.to_string())?;
        let b = fs::read(trees[1].join(f)).map_err(|e| e.to_string())?;
        bytes += a.len();
        if a != b {
            differ.push(f.display().to_string());
        }
    }
    Ok((differ.is_empty(), format!("{} CSV files, {bytes} bytes compared; differing: {differ:?}", files.len())))
}

fn main() {
    let workers = match resolve_workers(None, std::env::var(WORKERS_ENV).ok().as_deref()) {
        Ok(w) => w,
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(2);
        }
    };
    let mut s = Suite { root: tempfile::tempdir().expect("temp dir"), workers, health: Vec::new(), started: Instant::now() };
    s.progress(&format!("acceptance suite, {workers} worker(s), output in {}", s.root.path().display()));
    let mut results: BTreeMap<u8, Check> = BTreeMap::new();
    let staged: [(u8, fn(&mut Suite) -> Check); 8] = [
        (8, criterion_8),
        (7, criterion_7),
        (1, criterion_1),
        (9, criterion_9),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
    ];
    // Comma-separated criterion numbers restrict the run (health covers
    // whatever ran).
    let only: Option<Vec<u8>> =
        std::env::var("QAM_ACCEPTANCE_ONLY").ok().map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    for (id, f) in staged {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let r = f(&mut s);
        s.progress(&format!("criterion {id} finished"));
        results.insert(id, r);
    }
    results.insert(6, criterion_6(&s));
    let mut failed = 0;
    for (id, r) in &results {
        let (pass, detail) = match r {
            Ok((p, d)) => (*p, d.clone()),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!("criterion {id}: {} — {detail}", if pass { "PASS" } else { "FAIL" });
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
