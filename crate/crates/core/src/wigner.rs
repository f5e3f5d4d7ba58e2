//! Wigner functions on a phase-space grid and analytic steady Gaussians.
//!
//! The Fock-basis kernel of `|m><n|`, `m >= n`, `k = m - n`, is
//! `((-1)^n / pi) sqrt(n!/m!) (sqrt2 (x - i p))^k e^{-r^2} L_n^{(k)}(2 r^2)`.
//! Magnitudes are assembled in log space, so no factorial or power
//! overflows for any practical truncation.

use std::f64::consts::PI;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::dissipators::{DissipatorKind, DissipatorSpec, ThermalParams};
use crate::error::{invalid, Error, Result};
use crate::fock::DensityMatrix;
use crate::moments::{fpe_coefficients, steady_covariance, steady_mean};
use crate::ou::fmt17;
use crate::C64;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Tolerated normalization error before a coarse-grid warning.
pub const NORM_WARN: f64 = 1e-2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpaceGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub n_x: usize,
    pub n_p: usize,
}

impl Default for PhaseSpaceGrid {
    fn default() -> Self {
        Self { x_min: -8.0, x_max: 8.0, p_min: -8.0, p_max: 8.0, n_x: 256, n_p: 256 }
    }
}

impl PhaseSpaceGrid {
    pub fn new(x: (f64, f64), p: (f64, f64), n_x: usize, n_p: usize) -> Result<Self> {
        let g = Self { x_min: x.0, x_max: x.1, p_min: p.0, p_max: p.1, n_x, n_p };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let b = [self.x_min, self.x_max, self.p_min, self.p_max];
        if b.iter().any(|v| !v.is_finite()) || self.x_max <= self.x_min || self.p_max <= self.p_min {
            return Err(invalid("grid bounds must be finite with max > min"));
        }
        if self.n_x < 16 || self.n_p < 16 {
            return Err(invalid(format!("grid needs >= 16 points per axis, got {}x{}", self.n_x, self.n_p)));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n_x - 1) as f64
    }

    pub fn dp(&self) -> f64 {
        (self.p_max - self.p_min) / (self.n_p - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx()
    }

    pub fn p(&self, j: usize) -> f64 {
        self.p_min + j as f64 * self.dp()
    }
}

/// `W(x, p)` stored row-major, `values[i * n_p + j]` at `(x_i, p_j)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WignerField {
    pub grid: PhaseSpaceGrid,
    pub values: Vec<f64>,
}

/// Trapezoid weight of index `i` out of `n`.
fn trap(i: usize, n: usize) -> f64 {
    if i == 0 || i + 1 == n {
        0.5
    } else {
        1.0
    }
}

/// Phase-space mean and covariance of a field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldMoments {
    pub norm: f64,
    pub mean: [f64; 2],
    pub covariance: [[f64; 2]; 2],
}

impl WignerField {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.n_p + j]
    }

    /// Trapezoidal `integral W dx dp`.
    pub fn normalization(&self) -> f64 {
        self.moments().norm
    }

    pub fn moments(&self) -> FieldMoments {
        let g = &self.grid;
        let (mut s0, mut sx, mut sp, mut sxx, mut sxp, mut spp) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..g.n_x {
            let x = g.x(i);
            for j in 0..g.n_p {
                let p = g.p(j);
                let w = self.at(i, j) * trap(i, g.n_x) * trap(j, g.n_p);
                s0 += w;
                sx += w * x;
                sp += w * p;
                sxx += w * x * x;
                sxp += w * x * p;
                spp += w * p * p;
            }
        }
        let cell = g.dx() * g.dp();
        let norm = s0 * cell;
        let (mx, mp) = (sx / s0, sp / s0);
        let cxp = sxp / s0 - mx * mp;
        FieldMoments {
            norm,
            mean: [mx, mp],
            covariance: [[sxx / s0 - mx * mx, cxp], [cxp, spp / s0 - mp * mp]],
        }
    }

    /// `integral W dp` at every `x_i`.
    pub fn position_marginal(&self) -> Vec<f64> {
        let g = &self.grid;
        (0..g.n_x)
            .map(|i| (0..g.n_p).map(|j| self.at(i, j) * trap(j, g.n_p)).sum::<f64>() * g.dp())
            .collect()
    }

    /// `x,p,w`, row-major over the grid.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "x,p,w")?;
        let g = &self.grid;
        for i in 0..g.n_x {
            for j in 0..g.n_p {
                writeln!(w, "{},{},{}", fmt17(g.x(i)), fmt17(g.p(j)), fmt17(self.at(i, j)))?;
            }
        }
        Ok(())
    }
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n + 1];
    for k in 1..=n {
        out[k] = out[k - 1] + (k as f64).ln();
    }
    out
}

/// `W(x, p)` of `rho` at one point. `lnf` holds `ln k!` for `k < dim`;
/// `lag` is scratch of length `dim`.
fn wigner_point(rho: &DensityMatrix, lnf: &[f64], lag: &mut [f64], x: f64, p: f64) -> f64 {
    let dim = rho.dim();
    let r2 = x * x + p * p;
    let y = 2.0 * r2;
    let ln_sr = 0.5 * (2.0 * r2).ln(); // ln(sqrt2 r)
    let theta = p.atan2(x);
    let mut total = 0.0;
    for k in 0..dim {
        let len = dim - k;
        // L_n^{(k)}(y), n = 0..len
        lag[0] = 1.0;
        if len > 1 {
            lag[1] = 1.0 + k as f64 - y;
        }
        for j in 1..len.saturating_sub(1) {
            let jf = j as f64;
            lag[j + 1] = ((2.0 * jf + 1.0 + k as f64 - y) * lag[j] - (jf + k as f64) * lag[j - 1]) / (jf + 1.0);
        }
        let radial = if k == 0 {
            (-r2).exp()
        } else if r2 == 0.0 {
            0.0
        } else {
            (k as f64 * ln_sr - r2).exp()
        };
        if radial == 0.0 {
            continue;
        }
        let mut s = C64::new(0.0, 0.0);
        for n in 0..len {
            let m = n + k;
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            let c = sign * (0.5 * (lnf[n] - lnf[m])).exp() * lag[n];
            s += rho.data[(m, n)] * c;
        }
        s *= radial / PI;
        if k == 0 {
            total += s.re;
        } else {
            // (x - i p)^k / r^k = e^{-i k theta}
            let phase = C64::from_polar(1.0, -(k as f64) * theta);
            total += 2.0 * (s * phase).re;
        }
    }
    total
}

/// Samples the Wigner function of `rho` on `grid`.
pub fn wigner_from_density(rho: &DensityMatrix, grid: &PhaseSpaceGrid) -> Result<WignerField> {
    wigner_from_displaced(rho, [0.0, 0.0], grid)
}

/// Samples the Wigner function of `rho` translated by `offset = (x, p)`,
/// i.e. of a state held in a displaced frame.
pub fn wigner_from_displaced(rho: &DensityMatrix, offset: [f64; 2], grid: &PhaseSpaceGrid) -> Result<WignerField> {
    grid.validate()?;
    if !offset.iter().all(|v| v.is_finite()) {
        return Err(invalid(format!("offset must be finite, got {offset:?}")));
    }
    let scale = crate::fock::max_abs(&rho.data).max(1.0);
    let herm = rho.hermiticity_deviation();
    // an anti-Hermitian part would leave an imaginary residue in W
    if herm > 1e-10 * scale {
        return Err(invalid(format!("density matrix not Hermitian (deviation {herm:e})")));
    }
    let dim = rho.dim();
    let lnf = ln_factorials(dim);
    let mut values = vec![0.0; grid.n_x * grid.n_p];
    let row = |(i, out): (usize, &mut [f64])| {
        let mut lag = vec![0.0; dim];
        let x = grid.x(i) - offset[0];
        for (j, v) in out.iter_mut().enumerate() {
            *v = wigner_point(rho, &lnf, &mut lag, x, grid.p(j) - offset[1]);
        }
    };
    #[cfg(feature = "parallel")]
    values.par_chunks_mut(grid.n_p).enumerate().for_each(row);
    #[cfg(not(feature = "parallel"))]
    values.chunks_mut(grid.n_p).enumerate().for_each(row);
    let field = WignerField { grid: *grid, values };
    let norm = field.normalization();
    if (norm - 1.0).abs() > NORM_WARN {
        log::warn!("Wigner normalization {norm:.6} on the given grid; grid may be too coarse or small");
    }
    Ok(field)
}

/// `<x|rho|x>` from Hermite functions.
pub fn position_density(rho: &DensityMatrix, x: f64) -> f64 {
    let dim = rho.dim();
    let mut psi = vec![0.0; dim];
    psi[0] = PI.powf(-0.25) * (-0.5 * x * x).exp();
    if dim > 1 {
        psi[1] = 2f64.sqrt() * x * psi[0];
    }
    for n in 1..dim - 1 {
        let nf = n as f64;
        psi[n + 1] = (2.0 / (nf + 1.0)).sqrt() * x * psi[n] - (nf / (nf + 1.0)).sqrt() * psi[n - 1];
    }
    let mut acc = C64::new(0.0, 0.0);
    for m in 0..dim {
        for n in 0..dim {
            acc += rho.data[(m, n)] * (psi[m] * psi[n]);
        }
    }
    acc.re
}

/// Gaussian `N exp(-(q - q0)^T M (q - q0) / 2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticGaussian {
    pub mean: [f64; 2],
    pub precision: [[f64; 2]; 2],
    pub covariance: [[f64; 2]; 2],
    pub normalization: f64,
}

impl AnalyticGaussian {
    pub fn from_covariance(mean: [f64; 2], cov: [[f64; 2]; 2]) -> Result<Self> {
        let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
        if !(det > 0.0 && cov[0][0] > 0.0) {
            return Err(invalid("covariance must be positive definite"));
        }
        let precision = [[cov[1][1] / det, -cov[0][1] / det], [-cov[1][0] / det, cov[0][0] / det]];
        Ok(Self { mean, precision, covariance: cov, normalization: 1.0 / (2.0 * PI * det.sqrt()) })
    }

    pub fn evaluate(&self, x: f64, p: f64) -> f64 {
        let (dx, dp) = (x - self.mean[0], p - self.mean[1]);
        let m = &self.precision;
        let q = dx * dx * m[0][0] + dx * dp * (m[0][1] + m[1][0]) + dp * dp * m[1][1];
        self.normalization * (-0.5 * q).exp()
    }

    pub fn sample(&self, grid: &PhaseSpaceGrid) -> Result<WignerField> {
        grid.validate()?;
        let mut values = Vec::with_capacity(grid.n_x * grid.n_p);
        for i in 0..grid.n_x {
            for j in 0..grid.n_p {
                values.push(self.evaluate(grid.x(i), grid.p(j)));
            }
        }
        Ok(WignerField { grid: *grid, values })
    }

    /// `{mean, covariance, normalization}`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "mean": self.mean,
            "covariance": self.covariance,
            "normalization": self.normalization,
        })
    }
}

/// `T~ = (hbar omega / 2) coth(hbar omega / 2 k_B T)` in natural units.
pub fn effective_temperature(th: &ThermalParams) -> f64 {
    0.5 * th.coth_factor()
}

/// Steady state of the static Lindblad equation at fixed `x_c`: mean
/// `(16 x_c, 4 gamma x_c) / (gamma^2 + 16)`, covariance `T~ I`.
pub fn analytic_steady_static(x_c: f64, th: &ThermalParams) -> Result<AnalyticGaussian> {
    if th.gamma <= 0.0 {
        return Err(Error::NoSteadyState { gamma: th.gamma });
    }
    let g = th.gamma;
    let den = g * g + 16.0;
    let tt = effective_temperature(th);
    AnalyticGaussian::from_covariance([16.0 * x_c / den, 4.0 * g * x_c / den], [[tt, 0.0], [0.0, tt]])
}

/// Steady state of the translated Lindblad equation: mean `(x_c, 0)`,
/// covariance from the Lyapunov equation.
pub fn analytic_steady_translated(x_c: f64, th: &ThermalParams) -> Result<AnalyticGaussian> {
    analytic_steady(DissipatorKind::TranslatedLindblad, x_c, th)
}

/// Steady state of any kind from the moment equations' fixed point.
pub fn analytic_steady(kind: DissipatorKind, x_c: f64, th: &ThermalParams) -> Result<AnalyticGaussian> {
    let spec = DissipatorSpec::new(kind, *th);
    let cov = steady_covariance(&spec)?;
    let mean = steady_mean(&fpe_coefficients(&spec), x_c)?;
    AnalyticGaussian::from_covariance(mean, cov)
}

/// Grid argmax refined by a three-point parabola along each axis.
pub fn wigner_peak(field: &WignerField) -> Result<(f64, f64)> {
    let g = &field.grid;
    if field.values.iter().any(|v| !v.is_finite()) {
        return Err(invalid("field has non-finite values"));
    }
    let (mut bi, mut bj, mut best) = (0, 0, f64::NEG_INFINITY);
    for i in 0..g.n_x {
        for j in 0..g.n_p {
            if field.at(i, j) > best {
                best = field.at(i, j);
                bi = i;
                bj = j;
            }
        }
    }
    if bi == 0 || bj == 0 || bi + 1 == g.n_x || bj + 1 == g.n_p {
        return Err(Error::BoundaryPeak { x: g.x(bi), p: g.p(bj) });
    }
    let refine = |lo: f64, mid: f64, hi: f64| {
        let den = lo - 2.0 * mid + hi;
        if den < 0.0 {
            0.5 * (lo - hi) / den
        } else {
            0.0
        }
    };
    let ox = refine(field.at(bi - 1, bj), best, field.at(bi + 1, bj));
    let op = refine(field.at(bi, bj - 1), best, field.at(bi, bj + 1));
    Ok((g.x(bi) + ox * g.dx(), g.p(bj) + op * g.dp()))
}
