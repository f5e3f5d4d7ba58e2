//! Gaussian moment oracle.
//!
//! For a harmonic Hamiltonian and dissipators that are at most quadratic in
//! `x`, `p`, the Wigner function obeys a linear Fokker-Planck equation and
//! Gaussian states stay Gaussian. Means and covariance then follow closed
//! ODEs, integrated here without touching a density matrix.
//!
//! Sign convention: `dq/dt = -(A q + b(x_c)) + noise`, noise covariance rate
//! `2 g`, hence `dmu/dt = -(A mu + b)` and `dSigma/dt = -A Sigma - Sigma A^T + 2 g`.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::dissipators::{DissipatorKind, DissipatorSpec};
use crate::error::{invalid, Error, Result};
use crate::evolver::{record_steps, SimulationConfig};
use crate::fock::{MASS, OMEGA};
use crate::observables::{ensemble_msd, MsdSeries};
use crate::ou::OuTrajectory;

/// How the restoring-force prefactor `m omega^n` is read in the Wigner
/// equations. Identical in natural units; kept so both readings can be run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForceExponent {
    /// `m omega^2 (x - x_c)`.
    #[default]
    OmegaSquared,
    /// `m omega (x - x_c)`, as printed in the Agarwal equation.
    Omega,
}

impl ForceExponent {
    pub fn stiffness(self) -> f64 {
        match self {
            ForceExponent::OmegaSquared => MASS * OMEGA * OMEGA,
            ForceExponent::Omega => MASS * OMEGA,
        }
    }
}

/// Drift `f = A q + offset * x_c` and constant diffusion `g` (hbar = 1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FpeCoefficients {
    pub drift_matrix: [[f64; 2]; 2],
    /// `b(x_c) = drift_offset * x_c`.
    pub drift_offset: [f64; 2],
    pub diffusion: [[f64; 2]; 2],
}

impl FpeCoefficients {
    pub fn a(&self) -> Matrix2<f64> {
        let m = self.drift_matrix;
        Matrix2::new(m[0][0], m[0][1], m[1][0], m[1][1])
    }

    pub fn g(&self) -> Matrix2<f64> {
        let g = self.diffusion;
        Matrix2::new(g[0][0], g[0][1], g[1][0], g[1][1])
    }

    pub fn offset(&self, x_c: f64) -> Vector2<f64> {
        Vector2::new(self.drift_offset[0] * x_c, self.drift_offset[1] * x_c)
    }

    /// Source term of the excess covariance `Sigma - I/2`:
    /// `2 g - (A + A^T) / 2`.
    fn excess_source(&self) -> Matrix2<f64> {
        let a = self.a();
        self.g() * 2.0 - (a + a.transpose()) * 0.5
    }
}

pub fn fpe_coefficients(spec: &DissipatorSpec) -> FpeCoefficients {
    fpe_coefficients_with(spec, ForceExponent::default())
}

pub fn fpe_coefficients_with(spec: &DissipatorSpec, force: ForceExponent) -> FpeCoefficients {
    let th = &spec.thermal;
    let k = force.stiffness();
    let friction = th.gamma / 4.0;
    // (gamma / 8) coth(1 / 2T) = (nu_- + nu_+) / 4
    let g = th.rate_sum() / 4.0;
    match spec.kind {
        DissipatorKind::StaticLindblad | DissipatorKind::TranslatedLindblad => {
            let delta = if spec.kind == DissipatorKind::TranslatedLindblad { 1.0 } else { 0.0 };
            FpeCoefficients {
                drift_matrix: [[friction, -1.0 / MASS], [k, friction]],
                drift_offset: [-delta * friction, -k],
                diffusion: [[g / (MASS * OMEGA), 0.0], [0.0, g * MASS * OMEGA]],
            }
        }
        DissipatorKind::Agarwal => FpeCoefficients {
            drift_matrix: [[0.0, -1.0 / MASS], [k, friction]],
            drift_offset: [0.0, -k],
            diffusion: [[0.0, 0.0], [0.0, g * MASS * OMEGA]],
        },
    }
}

/// Which friction the classical dissipative oscillator is given.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassicalConvention {
    /// Friction `gamma`, diffusion `gamma k_B T`, literally.
    Literal,
    /// Friction `gamma / 4`, diffusion `gamma m k_B T / 4`, matching the
    /// high-temperature limit of the Agarwal table.
    QuarterGamma,
}

/// Classical Kramers coefficients for `m x'' + gamma x' = -m omega^2 (x - x_c)
/// + sqrt(gamma k_B T) eta`.
pub fn classical_fpe_coefficients(gamma: f64, temperature: f64, convention: ClassicalConvention) -> FpeCoefficients {
    let gc = match convention {
        ClassicalConvention::Literal => gamma,
        ClassicalConvention::QuarterGamma => gamma / 4.0,
    };
    let k = MASS * OMEGA * OMEGA;
    FpeCoefficients {
        drift_matrix: [[0.0, -1.0 / MASS], [k, gc]],
        drift_offset: [0.0, -k],
        diffusion: [[0.0, 0.0], [0.0, gc * MASS * temperature]],
    }
}

/// Phase-space mean and symmetric covariance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentState {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

impl MomentState {
    /// Ground state: zero mean, `Sigma = I / 2`.
    pub fn ground() -> Self {
        Self { mean: [0.0, 0.0], cov: [[0.5, 0.0], [0.0, 0.5]] }
    }

    pub fn x2(&self) -> f64 {
        self.cov[0][0] + self.mean[0] * self.mean[0]
    }

    fn mu(&self) -> Vector2<f64> {
        Vector2::new(self.mean[0], self.mean[1])
    }

    fn sigma(&self) -> Matrix2<f64> {
        Matrix2::new(self.cov[0][0], self.cov[0][1], self.cov[1][0], self.cov[1][1])
    }

    fn from_parts(mu: Vector2<f64>, s: Matrix2<f64>) -> Self {
        let off = 0.5 * (s[(0, 1)] + s[(1, 0)]);
        Self { mean: [mu[0], mu[1]], cov: [[s[(0, 0)], off], [off, s[(1, 1)]]] }
    }
}

fn rk4_pair(
    mu: Vector2<f64>,
    s: Matrix2<f64>,
    a: &Matrix2<f64>,
    b: &Vector2<f64>,
    src: &Matrix2<f64>,
    dt: f64,
) -> (Vector2<f64>, Matrix2<f64>) {
    let at = a.transpose();
    let fm = |m: &Vector2<f64>| -(a * m + b);
    let fs = |c: &Matrix2<f64>| -(a * c) - c * at + src;
    let (m1, s1) = (fm(&mu), fs(&s));
    let (m2, s2) = (fm(&(mu + m1 * (0.5 * dt))), fs(&(s + s1 * (0.5 * dt))));
    let (m3, s3) = (fm(&(mu + m2 * (0.5 * dt))), fs(&(s + s2 * (0.5 * dt))));
    let (m4, s4) = (fm(&(mu + m3 * dt)), fs(&(s + s3 * dt)));
    let mu = mu + (m1 + m2 * 2.0 + m3 * 2.0 + m4) * (dt / 6.0);
    let s = s + (s1 + s2 * 2.0 + s3 * 2.0 + s4) * (dt / 6.0);
    let off = 0.5 * (s[(0, 1)] + s[(1, 0)]);
    (mu, Matrix2::new(s[(0, 0)], off, off, s[(1, 1)]))
}

/// One classical RK4 step with `x_c` held fixed over the step.
pub fn moment_step(state: &MomentState, x_c: f64, dt: f64, coeffs: &FpeCoefficients) -> Result<MomentState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid(format!("dt must be positive, got {dt}")));
    }
    let (mu, s) = rk4_pair(state.mu(), state.sigma(), &coeffs.a(), &coeffs.offset(x_c), &(coeffs.g() * 2.0), dt);
    Ok(MomentState::from_parts(mu, s))
}

/// Fixed point of the mean for constant `x_c`: `A mu = -b`.
pub fn steady_mean(coeffs: &FpeCoefficients, x_c: f64) -> Result<[f64; 2]> {
    let lu = coeffs.a().lu();
    let mu = lu.solve(&(-coeffs.offset(x_c))).ok_or(Error::NoSteadyState { gamma: coeffs.drift_matrix[1][1] * 4.0 })?;
    Ok([mu[0], mu[1]])
}

/// Solves `A Sigma + Sigma A^T = 2 g` for the spec's coefficients.
pub fn steady_covariance(spec: &DissipatorSpec) -> Result<[[f64; 2]; 2]> {
    steady_covariance_for(&fpe_coefficients(spec)).map_err(|e| match e {
        Error::NoSteadyState { .. } => Error::NoSteadyState { gamma: spec.thermal.gamma },
        other => other,
    })
}

pub fn steady_covariance_for(coeffs: &FpeCoefficients) -> Result<[[f64; 2]; 2]> {
    let a = coeffs.a();
    let g = coeffs.g();
    // Unknowns (s_xx, s_xp, s_pp).
    let m = Matrix3::new(
        2.0 * a[(0, 0)], 2.0 * a[(0, 1)], 0.0,
        a[(1, 0)], a[(0, 0)] + a[(1, 1)], a[(0, 1)],
        0.0, 2.0 * a[(1, 0)], 2.0 * a[(1, 1)],
    );
    let rhs = Vector3::new(2.0 * g[(0, 0)], 2.0 * g[(0, 1)], 2.0 * g[(1, 1)]);
    // Stability: every eigenvalue of A needs a positive real part.
    let tr = a.trace();
    let det = a.determinant();
    if !(tr > 0.0 && det > 0.0) {
        return Err(Error::NoSteadyState { gamma: tr });
    }
    let s = m.lu().solve(&rhs).ok_or(Error::NoSteadyState { gamma: tr })?;
    Ok([[s[0], s[1]], [s[1], s[2]]])
}

/// Moments recorded alongside a density-matrix run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleRecord {
    pub t: f64,
    pub mean_x: f64,
    pub mean_p: f64,
    pub mean_x2: f64,
    /// `Sigma_xx - 1/2 + mu_x^2`, computed without the cancellation.
    pub msd: f64,
}

/// Per-trajectory oracle moments on the configuration's record grid.
///
/// Integrates the excess covariance `Sigma - I/2` so small displacements
/// keep full relative precision. `x_c` enters each step exactly as the
/// density-matrix stepper uses it.
pub fn oracle_trajectory(traj: &OuTrajectory, coeffs: &FpeCoefficients, cfg: &SimulationConfig) -> Result<Vec<OracleRecord>> {
    cfg.check_trajectory(traj)?;
    let steps = record_steps(cfg)?;
    let a = coeffs.a();
    let src = coeffs.excess_source();
    let dt = cfg.dt;
    let mut mu = Vector2::zeros();
    let mut ds = Matrix2::zeros();
    let mut out = Vec::with_capacity(steps.len());
    let mut next = 0;
    let last = *steps.last().unwrap();
    for k in 0..=last {
        if steps[next] == k {
            out.push(OracleRecord {
                t: k as f64 * dt,
                mean_x: mu[0],
                mean_p: mu[1],
                mean_x2: 0.5 + ds[(0, 0)] + mu[0] * mu[0],
                msd: ds[(0, 0)] + mu[0] * mu[0],
            });
            next += 1;
        }
        if k == last {
            break;
        }
        let x_c = cfg.step_drive(traj, k);
        let (m2, s2) = rk4_pair(mu, ds, &a, &coeffs.offset(x_c), &src, dt);
        mu = m2;
        ds = s2;
    }
    Ok(out)
}

/// Trajectories must carry seeds `base_seed + i` in order.
pub fn check_pairing(expected: &[u64], got: &[u64]) -> Result<()> {
    if expected.len() != got.len() {
        return Err(Error::Pairing(format!("{} trajectories vs {}", expected.len(), got.len())));
    }
    if let Some(i) = expected.iter().zip(got).position(|(a, b)| a != b) {
        return Err(Error::Pairing(format!("trajectory {i}: seed {} vs {}", expected[i], got[i])));
    }
    Ok(())
}

/// Ensemble oracle MSD over the given trajectories.
pub fn oracle_msd(trajs: &[OuTrajectory], spec: &DissipatorSpec, cfg: &SimulationConfig) -> Result<MsdSeries> {
    let expected: Vec<u64> = (0..trajs.len() as u64).map(|i| cfg.base_seed.wrapping_add(i)).collect();
    let got: Vec<u64> = trajs.iter().map(|t| t.seed).collect();
    check_pairing(&expected, &got)?;
    let coeffs = fpe_coefficients_with(spec, cfg.force_exponent);
    let runs = trajs
        .iter()
        .map(|tr| oracle_trajectory(tr, &coeffs, cfg).map(|r| r.into_iter().map(|x| (x.t, x.msd)).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?;
    ensemble_msd(&runs)
}
