//! End-to-end checks of the public API against references computed here.

use qam_core::ensemble::{compare_with_oracle, run_ensemble, EnsembleOptions};
use qam_core::evolver::{evolve, Frame};
use qam_core::fock::ground_state;
use qam_core::ou::generate_trajectory;
use qam_core::wigner::wigner_from_density;
use qam_core::{DissipatorKind, DissipatorSpec, OuParams, PhaseSpaceGrid, SimulationConfig, ThermalParams};

fn cfg(kind: DissipatorKind, nu_minus: f64) -> SimulationConfig {
    SimulationConfig {
        dissipator: DissipatorSpec::new(kind, ThermalParams::new(1e-8, nu_minus).unwrap()),
        ..Default::default()
    }
}

/// Composite Simpson rule on `[0, t]` with an even number of panels.
fn simpson(t: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    if t == 0.0 {
        return 0.0;
    }
    let h = t / n as f64;
    let inner: f64 = (1..n).map(|k| if k % 2 == 1 { 4.0 } else { 2.0 } * f(k as f64 * h)).sum();
    h / 3.0 * (f(0.0) + inner + f(t))
}

/// `<x(t)^2> = 2 int_0^t ds int_0^s du Cov(v(s), v(u))`, with the velocity
/// released from rest: `Cov = (D / tau) (e^{-(s-u)/tau} - e^{-(s+u)/tau})`.
fn msd_by_quadrature(t: f64, p: &OuParams) -> f64 {
    let cov = |s: f64, u: f64| p.diff / p.tau * ((-(s - u) / p.tau).exp() - (-(s + u) / p.tau).exp());
    2.0 * simpson(t, 400, |s| simpson(s, 400, |u| cov(s, u)))
}

#[test]
fn driving_ensemble_matches_quadrature() {
    let p = OuParams::new(2.0, 0.5).unwrap();
    let (dt, t_final, n) = (0.01, 10.0, 4000);
    let paths: Vec<_> = (0..n).map(|s| generate_trajectory(&p, dt, t_final, s).unwrap()).collect();
    for t in [0.5, 2.0, 5.0, 10.0] {
        let k = (t / dt).round() as usize;
        let sq: Vec<f64> = paths.iter().map(|tr| tr.x_c(k).powi(2)).collect();
        let mean = sq.iter().sum::<f64>() / n as f64;
        let var = sq.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        let expected = msd_by_quadrature(t, &p);
        assert!((mean - expected).abs() < 4.0 * se, "t = {t}: {mean} vs {expected} (se {se})");
    }
}

#[test]
fn ground_state_wigner_is_the_vacuum_gaussian() {
    let rho = ground_state(16).unwrap();
    let grid = PhaseSpaceGrid::new((-3.0, 3.0), (-3.0, 3.0), 25, 25).unwrap();
    let field = wigner_from_density(&rho, &grid).unwrap();
    for i in 0..25 {
        for j in 0..25 {
            let (x, p) = (grid.x(i), grid.p(j));
            let expected = (-(x * x) - p * p).exp() / std::f64::consts::PI;
            assert!((field.at(i, j) - expected).abs() < 1e-10, "({x}, {p})");
        }
    }
}

#[test]
fn quantum_ensemble_tracks_moment_oracle_for_every_kind() {
    for kind in DissipatorKind::ALL {
        for nu in [1e-2, 1.0] {
            let c = SimulationConfig { t_final: 5.0, n_traj: 3, ..cfg(kind, nu) };
            let r = run_ensemble(&c, &EnsembleOptions { workers: 2, ..Default::default() }).unwrap();
            let cmp = compare_with_oracle(&r, 1e-3, 1e-6).unwrap();
            assert_eq!(cmp.violations, 0, "{kind} nu_- = {nu}: {cmp:?}");
        }
    }
}

#[test]
fn ensemble_is_independent_of_worker_count() {
    let c = SimulationConfig { t_final: 2.0, n_traj: 6, ..cfg(DissipatorKind::Agarwal, 1.0) };
    let run = |workers| run_ensemble(&c, &EnsembleOptions { workers, ..Default::default() }).unwrap();
    let (a, b) = (run(1), run(4));
    assert_eq!(a.quantum, b.quantum);
    assert_eq!(a.oracle, b.oracle);
    assert_eq!(a.driving, b.driving);
}

/// Strong damping leaves coherences spanning ~160 decades, on which a bare
/// QR eigensolver returns -inf.
#[test]
fn strongly_damped_state_has_finite_min_eigenvalue() {
    let c = SimulationConfig { t_final: 2.35, log_records_per_decade: Some(20), frame: Frame::Lab, ..cfg(DissipatorKind::StaticLindblad, 10.0) };
    let traj = generate_trajectory(&c.ou, c.dt, c.t_final, 12).unwrap();
    let w = evolve(&traj, &c).unwrap().worst();
    assert!(w.min_eig.is_finite() && w.min_eig > -1e-12, "{}", w.min_eig);
}
