//! Inertial Ornstein-Uhlenbeck driving of the trap center.
//!
//! The trap center obeys `tau * x'' = -x' + sqrt(2 D) * eta(t)`, i.e. the
//! velocity `v = x'` is an OU process with relaxation time `tau` and `x` is
//! its time integral. The joint process `(x, v)` is Gaussian, so it is
//! sampled with its exact transition kernel rather than an SDE scheme.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Persistence time and noise strength of the driving process.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuParams {
    /// Persistence time `tau`, in units of `1 / omega`.
    pub tau: f64,
    /// Noise strength `D`.
    pub diff: f64,
}

impl Default for OuParams {
    fn default() -> Self {
        Self { tau: 10.0, diff: 0.01 }
    }
}

impl OuParams {
    pub fn new(tau: f64, diff: f64) -> Result<Self> {
        let p = Self { tau, diff };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(invalid(format!("tau must be positive and finite, got {}", self.tau)));
        }
        if !(self.diff.is_finite() && self.diff >= 0.0) {
            return Err(invalid(format!("diff must be non-negative and finite, got {}", self.diff)));
        }
        Ok(())
    }

    /// Stationary variance of the velocity, `D / tau`.
    pub fn stationary_velocity_variance(&self) -> f64 {
        self.diff / self.tau
    }
}

/// `u - 2(1 - e^-u) + (1 - e^-2u)/2`, the dimensionless integrated-velocity
/// variance. Behaves as `u^3 / 3` near zero, where the closed form cancels
/// catastrophically, so small arguments use the Taylor series.
fn integrated_variance_shape(u: f64) -> f64 {
    if u < 0.5 {
        // sum_{k>=3} (-1)^k (2 - 2^(k-1)) u^k / k!
        let mut sum = 0.0;
        let mut term = u * u / 2.0; // u^k / k! at k = 2
        let mut pow2 = 2.0; // 2^(k-1) at k = 2
        for k in 3..40 {
            term *= u / k as f64;
            pow2 *= 2.0;
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            let c = sign * (2.0 - pow2) * term;
            sum += c;
            if c.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        sum
    } else {
        u + 2.0 * (-u).exp_m1() - 0.5 * (-2.0 * u).exp_m1()
    }
}

/// Closed-form `<x_c(t)^2>` for `x_c(0) = 0`, `v(0) = 0`:
/// `2 D [t - 2 tau (1 - e^{-t/tau}) + (tau / 2)(1 - e^{-2t/tau})]`.
pub fn ou_msd_analytic(t: f64, params: &OuParams) -> Result<f64> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(invalid(format!("time must be finite and non-negative, got {t}")));
    }
    params.validate()?;
    Ok(2.0 * params.diff * params.tau * integrated_variance_shape(t / params.tau))
}

/// Exact one-step transition of `(x_c, v)` over a fixed `dt`.
///
/// Means: `v' = a v`, `x' = x + tau (1 - a) v` with `a = e^{-dt/tau}`.
/// The noise is the Cholesky factor of the closed-form 2x2 covariance.
#[derive(Clone, Copy, Debug)]
pub struct OuKernel {
    decay: f64,
    x_from_v: f64,
    l_vv: f64,
    l_xv: f64,
    l_xx: f64,
    var_x: f64,
}

impl OuKernel {
    pub fn new(params: &OuParams, dt: f64) -> Result<Self> {
        params.validate()?;
        if !(dt.is_finite() && dt > 0.0) {
            return Err(invalid(format!("dt must be positive and finite, got {dt}")));
        }
        let OuParams { tau, diff } = *params;
        let u = dt / tau;
        let em1 = (-u).exp_m1(); // a - 1
        let decay = 1.0 + em1;
        let var_v = -(diff / tau) * (-2.0 * u).exp_m1();
        let var_x = 2.0 * diff * tau * integrated_variance_shape(u);
        let cov_xv = diff * em1 * em1;
        let (l_vv, l_xv, l_xx) = if var_v > 0.0 {
            let l_vv = var_v.sqrt();
            let l_xv = cov_xv / l_vv;
            (l_vv, l_xv, (var_x - l_xv * l_xv).max(0.0).sqrt())
        } else {
            (0.0, 0.0, 0.0)
        };
        Ok(Self { decay, x_from_v: -tau * em1, l_vv, l_xv, l_xx, var_x })
    }

    /// Variance of the position increment over one step.
    pub fn position_variance(&self) -> f64 {
        self.var_x
    }

    #[inline]
    pub fn step<R: Rng + ?Sized>(&self, (x, v): (f64, f64), rng: &mut R) -> (f64, f64) {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let x_new = x + self.x_from_v * v + self.l_xv * z1 + self.l_xx * z2;
        let v_new = self.decay * v + self.l_vv * z1;
        (x_new, v_new)
    }
}

/// Draws `(x_c, v)` at `t + dt` from the exact transition kernel.
pub fn ou_exact_step<R: Rng + ?Sized>(
    state: (f64, f64),
    dt: f64,
    params: &OuParams,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if !(state.0.is_finite() && state.1.is_finite()) {
        return Err(invalid(format!("non-finite OU state {state:?}")));
    }
    Ok(OuKernel::new(params, dt)?.step(state, rng))
}

/// Per-trajectory random stream. Seeds map one-to-one onto streams, so the
/// ensemble is reproducible regardless of how trajectories are scheduled.
pub fn trajectory_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Number of steps of size `dt` that fit in `t_final`, tolerant of the
/// rounding in `t_final / dt` (e.g. `50.0 / 1e-3`).
pub fn step_count(dt: f64, t_final: f64) -> usize {
    (t_final / dt * (1.0 + 1e-12)).floor() as usize
}

/// A sampled trap-center path with its velocity.
#[derive(Clone, Debug, PartialEq)]
pub struct OuTrajectory {
    pub seed: u64,
    pub dt: f64,
    /// `(x_c, v)` at `t = k dt`.
    pub samples: Vec<(f64, f64)>,
}

impl OuTrajectory {
    /// A trap held at `x_c` for the whole run; used for relaxation runs.
    pub fn fixed(x_c: f64, dt: f64, t_final: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0 && t_final >= dt) {
            return Err(invalid(format!("need 0 < dt <= t_final, got dt={dt}, t_final={t_final}")));
        }
        let n = step_count(dt, t_final);
        Ok(Self { seed: 0, dt, samples: vec![(x_c, 0.0); n + 1] })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    #[inline]
    pub fn x_c(&self, k: usize) -> f64 {
        self.samples[k].0
    }

    pub fn t_final(&self) -> f64 {
        (self.samples.len() - 1) as f64 * self.dt
    }

    /// CSV with header `t,x_c,v`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,x_c,v")?;
        for (k, &(x, v)) in self.samples.iter().enumerate() {
            writeln!(w, "{},{},{}", fmt17(k as f64 * self.dt), fmt17(x), fmt17(v))?;
        }
        Ok(())
    }
}

/// Samples a trajectory from `x_c(0) = 0`, `v(0) = 0`.
pub fn generate_trajectory(params: &OuParams, dt: f64, t_final: f64, seed: u64) -> Result<OuTrajectory> {
    if !(t_final.is_finite() && t_final >= dt) {
        return Err(invalid(format!("t_final must be >= dt, got t_final={t_final}, dt={dt}")));
    }
    let kernel = OuKernel::new(params, dt)?;
    let n = step_count(dt, t_final);
    let mut rng = trajectory_rng(seed);
    let mut samples = Vec::with_capacity(n + 1);
    let mut state = (0.0, 0.0);
    samples.push(state);
    for _ in 0..n {
        state = kernel.step(state, &mut rng);
        samples.push(state);
    }
    Ok(OuTrajectory { seed, dt, samples })
}

/// Formats a float with 17 significant digits.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}
