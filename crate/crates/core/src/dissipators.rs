//! Dissipators and the full time-local generator.
//!
//! Two implementations live here. The `apply_*` functions and [`generator`]
//! are literal dense-matrix transcriptions of the master equations and serve
//! as the reference. [`GeneratorKernel`] evaluates the same generator with
//! tridiagonal stencils in `O(N^2)`; it is what the time stepper uses, and
//! its tests pin it to the dense reference.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fock::{anticommutator, commutator, imag_unit, DensityMatrix, OperatorSet};
use crate::{CMatrix, C64};

/// Bath rates and the derived dissipation strength, occupation and
/// temperature. `(nu_plus, nu_minus)` is the canonical form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermalParams {
    pub nu_plus: f64,
    pub nu_minus: f64,
    /// `2 (nu_minus - nu_plus)`.
    pub gamma: f64,
    /// `nu_plus / (nu_minus - nu_plus)`.
    pub nbar: f64,
    /// `k_B T / (hbar omega) = 1 / ln(nu_minus / nu_plus)`; zero when
    /// `nu_plus = 0`.
    pub temperature: f64,
}

impl ThermalParams {
    pub fn new(nu_plus: f64, nu_minus: f64) -> Result<Self> {
        if !(nu_plus.is_finite() && nu_minus.is_finite()) {
            return Err(invalid("thermal rates must be finite"));
        }
        if nu_plus == 0.0 && nu_minus == 0.0 {
            return Ok(Self::zero());
        }
        if nu_plus < 0.0 {
            return Err(invalid(format!("nu_plus must be >= 0, got {nu_plus}")));
        }
        if nu_minus <= nu_plus {
            return Err(invalid(format!(
                "nu_minus ({nu_minus}) must exceed nu_plus ({nu_plus}) for positive dissipation"
            )));
        }
        let diff = nu_minus - nu_plus;
        let temperature = if nu_plus > 0.0 { 1.0 / (nu_minus / nu_plus).ln() } else { 0.0 };
        Ok(Self { nu_plus, nu_minus, gamma: 2.0 * diff, nbar: nu_plus / diff, temperature })
    }

    /// No dissipation at all (`gamma = 0`); only reachable as `(0, 0)`.
    pub fn zero() -> Self {
        Self { nu_plus: 0.0, nu_minus: 0.0, gamma: 0.0, nbar: 0.0, temperature: 0.0 }
    }

    /// `nu_plus = gamma nbar / 2`, `nu_minus = gamma (nbar + 1) / 2`.
    pub fn from_gamma_nbar(gamma: f64, nbar: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(invalid(format!("gamma must be positive, got {gamma}")));
        }
        if !(nbar >= 0.0 && nbar.is_finite()) {
            return Err(invalid(format!("nbar must be >= 0, got {nbar}")));
        }
        let mut th = Self::new(0.5 * gamma * nbar, 0.5 * gamma * (nbar + 1.0))?;
        th.gamma = gamma;
        th.nbar = nbar;
        Ok(th)
    }

    /// Rates at bath temperature `k_B T / hbar omega`.
    pub fn from_temperature(gamma: f64, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(invalid(format!("temperature must be positive, got {temperature}")));
        }
        let nbar = 1.0 / (1.0 / temperature).exp_m1();
        let mut th = Self::from_gamma_nbar(gamma, nbar)?;
        th.temperature = temperature;
        Ok(th)
    }

    /// `nu_minus + nu_plus = gamma (nbar + 1/2) = (gamma / 2) coth(1 / 2T)`.
    pub fn rate_sum(&self) -> f64 {
        self.nu_minus + self.nu_plus
    }

    /// `coth(hbar omega / 2 k_B T) = 2 nbar + 1`.
    pub fn coth_factor(&self) -> f64 {
        self.rate_sum() / (self.nu_minus - self.nu_plus)
    }
}

/// Which dissipator enters the generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DissipatorKind {
    #[serde(alias = "static")]
    StaticLindblad,
    #[serde(alias = "translated")]
    TranslatedLindblad,
    Agarwal,
}

impl DissipatorKind {
    pub const ALL: [DissipatorKind; 3] =
        [DissipatorKind::StaticLindblad, DissipatorKind::TranslatedLindblad, DissipatorKind::Agarwal];

    pub fn short_name(&self) -> &'static str {
        match self {
            DissipatorKind::StaticLindblad => "static",
            DissipatorKind::TranslatedLindblad => "translated",
            DissipatorKind::Agarwal => "agarwal",
        }
    }
}

impl std::fmt::Display for DissipatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.short_name())
    }
}

impl std::str::FromStr for DissipatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" | "static_lindblad" => Ok(DissipatorKind::StaticLindblad),
            "translated" | "translated_lindblad" => Ok(DissipatorKind::TranslatedLindblad),
            "agarwal" => Ok(DissipatorKind::Agarwal),
            other => Err(invalid(format!("unknown dissipator kind '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DissipatorSpec {
    pub kind: DissipatorKind,
    pub thermal: ThermalParams,
}

impl DissipatorSpec {
    pub fn new(kind: DissipatorKind, thermal: ThermalParams) -> Self {
        Self { kind, thermal }
    }
}

pub fn thermal_params(nu_plus: f64, nu_minus: f64) -> Result<ThermalParams> {
    ThermalParams::new(nu_plus, nu_minus)
}

fn check_dim(rho: &DensityMatrix, ops: &OperatorSet) -> Result<()> {
    if rho.dim() != ops.dim {
        return Err(Error::DimensionMismatch { expected: ops.dim, got: rho.dim() });
    }
    Ok(())
}

fn real(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// `nu_+ (L^dag rho L - {L L^dag, rho}/2) + nu_- (L rho L^dag - {L^dag L, rho}/2)`.
fn lindblad_pair(rho: &CMatrix, l: &CMatrix, l_dag: &CMatrix, th: &ThermalParams) -> CMatrix {
    let gain = l_dag * rho * l - anticommutator(&(l * l_dag), rho) * real(0.5);
    let loss = l * rho * l_dag - anticommutator(&(l_dag * l), rho) * real(0.5);
    gain * real(th.nu_plus) + loss * real(th.nu_minus)
}

pub fn apply_static_lindblad(rho: &DensityMatrix, ops: &OperatorSet, th: &ThermalParams) -> Result<CMatrix> {
    check_dim(rho, ops)?;
    Ok(lindblad_pair(&rho.data, &ops.a, &ops.a_dag, th))
}

pub fn apply_translated_lindblad(
    rho: &DensityMatrix,
    ops: &OperatorSet,
    x_c: f64,
    th: &ThermalParams,
) -> Result<CMatrix> {
    check_dim(rho, ops)?;
    if !x_c.is_finite() {
        return Err(invalid(format!("x_c must be finite, got {x_c}")));
    }
    let (at, at_dag) = ops.translated_ladder(x_c);
    Ok(lindblad_pair(&rho.data, &at, &at_dag, th))
}

/// `-(i gamma / 8)[x, {p, rho}] - (gamma / 4)(nbar + 1/2)[x, [x, rho]]`.
pub fn apply_agarwal(rho: &DensityMatrix, ops: &OperatorSet, th: &ThermalParams) -> Result<CMatrix> {
    check_dim(rho, ops)?;
    let friction = commutator(&ops.x_op, &anticommutator(&ops.p_op, &rho.data));
    let diffusion = commutator(&ops.x_op, &commutator(&ops.x_op, &rho.data));
    Ok(friction * C64::new(0.0, -th.gamma / 8.0) - diffusion * real(0.25 * th.rate_sum()))
}

pub fn apply_dissipator(rho: &DensityMatrix, ops: &OperatorSet, x_c: f64, spec: &DissipatorSpec) -> Result<CMatrix> {
    match spec.kind {
        DissipatorKind::StaticLindblad => apply_static_lindblad(rho, ops, &spec.thermal),
        DissipatorKind::TranslatedLindblad => apply_translated_lindblad(rho, ops, x_c, &spec.thermal),
        DissipatorKind::Agarwal => apply_agarwal(rho, ops, &spec.thermal),
    }
}

/// `-i [H(x_c), rho] + D(rho)`, dense reference.
pub fn generator(rho: &DensityMatrix, ops: &OperatorSet, x_c: f64, spec: &DissipatorSpec) -> Result<CMatrix> {
    let h = crate::fock::hamiltonian(ops, x_c)?;
    let unitary = commutator(&h, &rho.data) * (-imag_unit());
    Ok(unitary + apply_dissipator(rho, ops, x_c, spec)?)
}

/// Length of a zero-bordered `dim x dim` buffer, see [`padded_index`].
pub fn padded_len(dim: usize) -> usize {
    (dim + 2) * (dim + 2)
}

/// Position of `(row, col)` in column-major storage of stride `dim + 2`
/// with a one-element zero border, so stencil neighbors never need bounds
/// tests.
#[inline]
pub fn padded_index(dim: usize, row: usize, col: usize) -> usize {
    (col + 1) * (dim + 2) + row + 1
}

/// Copies a column-major matrix into a zero-bordered buffer.
pub fn pad_into(dim: usize, plain: &[C64], padded: &mut [C64]) {
    padded.fill(C64::new(0.0, 0.0));
    for col in 0..dim {
        let start = padded_index(dim, 0, col);
        padded[start..start + dim].copy_from_slice(&plain[col * dim..(col + 1) * dim]);
    }
}

/// Inverse of [`pad_into`].
pub fn unpad_into(dim: usize, padded: &[C64], plain: &mut [C64]) {
    for col in 0..dim {
        let start = padded_index(dim, 0, col);
        plain[col * dim..(col + 1) * dim].copy_from_slice(&padded[start..start + dim]);
    }
}

/// Fills the upper triangle of a padded buffer from its lower triangle.
fn mirror_lower(n: usize, out: &mut [C64]) {
    let p = n + 2;
    for c in 1..=n {
        for r in (c + 1)..=n {
            out[r * p + c] = out[c * p + r].conj();
        }
    }
}

/// Stencil evaluation of the generator on Hermitian inputs.
///
/// Only the lower triangle is computed; the upper triangle is filled by
/// conjugation, so Hermitian inputs give exactly Hermitian outputs. The
/// work buffers use the zero-bordered layout of [`padded_index`].
#[derive(Clone, Debug)]
pub struct GeneratorKernel {
    dim: usize,
    kind: DissipatorKind,
    gamma: f64,
    agarwal_diffusion: f64,
    // Per padded index r = m + 1:
    /// `s_m = sqrt(m / 2)`, coefficient of the `m - 1` neighbor.
    s_lo: Vec<f64>,
    /// `s_{m+1}`, coefficient of the `m + 1` neighbor.
    s_hi: Vec<f64>,
    h0: Vec<f64>,
    /// `(nu_+ d_m + nu_- m) / 2`, the anticommutator decay rate.
    half_decay: Vec<f64>,
    /// `sqrt(nu_+ m)` and `sqrt(nu_- (m + 1))`: jump-term factors.
    gain: Vec<f64>,
    loss: Vec<f64>,
    up: Vec<C64>,
    down: Vec<C64>,
    scratch: Vec<C64>,
    pad_in: Vec<C64>,
    pad_out: Vec<C64>,
}

impl GeneratorKernel {
    pub fn new(ops: &OperatorSet, spec: &DissipatorSpec) -> Self {
        let th = spec.thermal;
        let n = ops.dim;
        let p = n + 2;
        let mut s_lo = vec![0.0; p];
        let mut s_hi = vec![0.0; p];
        let mut h0 = vec![0.0; p];
        let mut half_decay = vec![0.0; p];
        let mut gain = vec![0.0; p];
        let mut loss = vec![0.0; p];
        for m in 0..n {
            let r = m + 1;
            s_lo[r] = ops.s[m];
            s_hi[r] = (0.5 * (m + 1) as f64).sqrt();
            h0[r] = ops.h0_diag[m];
            half_decay[r] = 0.5 * (th.nu_plus * ops.aad_diag[m] + th.nu_minus * m as f64);
            gain[r] = (th.nu_plus * m as f64).sqrt();
            loss[r] = (th.nu_minus * (m + 1) as f64).sqrt();
        }
        let zero = C64::new(0.0, 0.0);
        Self {
            dim: n,
            kind: spec.kind,
            gamma: th.gamma,
            agarwal_diffusion: 0.25 * th.rate_sum(),
            s_lo,
            s_hi,
            h0,
            half_decay,
            gain,
            loss,
            up: vec![zero; p],
            down: vec![zero; p],
            scratch: vec![zero; p * p],
            pad_in: vec![zero; p * p],
            pad_out: vec![zero; p * p],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> DissipatorKind {
        self.kind
    }

    /// Writes `G(rho; x_c)` into `out`. Both slices are column-major
    /// `dim x dim`; `rho` must be Hermitian.
    pub fn apply(&mut self, rho: &[C64], x_c: f64, out: &mut [C64]) {
        let n = self.dim;
        assert_eq!(rho.len(), n * n);
        assert_eq!(out.len(), n * n);
        let mut pin = std::mem::take(&mut self.pad_in);
        let mut pout = std::mem::take(&mut self.pad_out);
        pad_into(n, rho, &mut pin);
        self.apply_padded(&pin, x_c, &mut pout);
        unpad_into(n, &pout, out);
        self.pad_in = pin;
        self.pad_out = pout;
    }

    /// As [`apply`](Self::apply) on zero-bordered buffers. The border of
    /// `out` is left untouched.
    pub fn apply_padded(&mut self, rho: &[C64], x_c: f64, out: &mut [C64]) {
        let mu = self.drive(x_c, C64::new(0.0, 0.0));
        self.apply_drive_padded(rho, mu, out);
    }

    /// Coefficient `mu` of the linear part `-i[mu a + mu^* a^dag, rho]` of
    /// the generator, in the frame displaced by `alpha = (xb + i pb)/sqrt 2`
    /// (`alpha = 0` is the lab frame).
    ///
    /// Under `a -> a + alpha` the Hamiltonian becomes
    /// `h0 - (x_c - xb) x + pb p`; a Lindblad pair on `a + s` equals the pair
    /// on `a` plus the Hamiltonian `(gamma / 4) i (s^* a - s a^dag)`; and the
    /// Agarwal friction gains `(gamma pb / 4) x`. The frame's own motion is
    /// not included; see [`add_linear_padded`](Self::add_linear_padded).
    pub fn drive(&self, x_c: f64, alpha: C64) -> C64 {
        let r2 = std::f64::consts::SQRT_2;
        let (xb, pb) = (r2 * alpha.re, r2 * alpha.im);
        let i = C64::new(0.0, 1.0);
        let ham = C64::new(-(x_c - xb), -pb) / r2;
        let shift = match self.kind {
            DissipatorKind::StaticLindblad => alpha,
            DissipatorKind::TranslatedLindblad => alpha - x_c / r2,
            DissipatorKind::Agarwal => return ham + self.gamma * pb / (4.0 * r2),
        };
        ham + i * shift.conj() * (0.25 * self.gamma)
    }

    /// Neighbor coefficients of `-i[mu a + mu^* a^dag, .]`: rows `m - 1`,
    /// `m + 1`, then columns `n - 1`, `n + 1` (the conjugates).
    fn neighbor_coefficients(mu: C64) -> (C64, C64, C64, C64) {
        let r2 = std::f64::consts::SQRT_2;
        let up = C64::new(0.0, -r2) * mu.conj();
        let down = C64::new(0.0, -r2) * mu;
        (up, down, up.conj(), down.conj())
    }

    /// Writes the generator with linear coefficient `mu` (see
    /// [`drive`](Self::drive)) into `out`.
    pub fn apply_drive_padded(&mut self, rho: &[C64], mu: C64, out: &mut [C64]) {
        let n = self.dim;
        let p = n + 2;
        assert_eq!(rho.len(), p * p);
        assert_eq!(out.len(), p * p);
        let (up, down, left, right) = Self::neighbor_coefficients(mu);
        for r in 1..=n {
            self.up[r] = up * self.s_lo[r];
            self.down[r] = down * self.s_hi[r];
        }
        if self.kind == DissipatorKind::Agarwal {
            self.sweep::<false>(rho, left, right, out);
            self.agarwal_into(rho, out);
        } else {
            self.sweep::<true>(rho, left, right, out);
        }
        mirror_lower(n, out);
    }

    /// Adds `-i[mu a + mu^* a^dag, rho]` to `out`.
    pub fn add_linear_padded(&self, rho: &[C64], mu: C64, out: &mut [C64]) {
        let n = self.dim;
        let p = n + 2;
        let (up, down, left, right) = Self::neighbor_coefficients(mu);
        for c in 1..=n {
            let base = c * p;
            let cl = left * self.s_lo[c];
            let cr = right * self.s_hi[c];
            let len = n - c + 1;
            let k0 = base + c;
            let (rm, rp) = (&rho[k0 - 1..k0 - 1 + len], &rho[k0 + 1..k0 + 1 + len]);
            let (rl, rr) = (&rho[k0 - p..k0 - p + len], &rho[k0 + p..k0 + p + len]);
            let (sl, sh) = (&self.s_lo[c..c + len], &self.s_hi[c..c + len]);
            let dst = &mut out[k0..k0 + len];
            for i in 0..len {
                dst[i] += up * (sl[i] * rm[i]) + down * (sh[i] * rp[i]) + cl * rl[i] + cr * rr[i];
            }
        }
        mirror_lower(n, out);
    }

    /// Hamiltonian part, plus the Lindblad part when `LINDBLAD`, on the
    /// lower triangle.
    fn sweep<const LINDBLAD: bool>(&self, rho: &[C64], left: C64, right: C64, out: &mut [C64]) {
        let n = self.dim;
        let p = n + 2;
        for c in 1..=n {
            let base = c * p;
            let lft = &rho[base - p..base];
            let cur = &rho[base..base + p];
            let rgt = &rho[base + p..base + 2 * p];
            let cl = left * self.s_lo[c];
            let cr = right * self.s_hi[c];
            let (hc, dc, gc, lc) = (self.h0[c], self.half_decay[c], self.gain[c], self.loss[c]);
            let len = n - c + 1;
            // Exact-length windows let the compiler drop bounds checks.
            let (cm, c0, cp) = (&cur[c - 1..c - 1 + len], &cur[c..c + len], &cur[c + 1..c + 1 + len]);
            let (lm, l0) = (&lft[c - 1..c - 1 + len], &lft[c..c + len]);
            let (r0, rp) = (&rgt[c..c + len], &rgt[c + 1..c + 1 + len]);
            let (up, down) = (&self.up[c..c + len], &self.down[c..c + len]);
            let (h0, hd) = (&self.h0[c..c + len], &self.half_decay[c..c + len]);
            let (gain, loss) = (&self.gain[c..c + len], &self.loss[c..c + len]);
            let dst = &mut out[base + c..base + c + len];
            for i in 0..len {
                let diag = if LINDBLAD { C64::new(-(hd[i] + dc), hc - h0[i]) } else { C64::new(0.0, hc - h0[i]) };
                let mut acc = diag * c0[i] + up[i] * cm[i] + down[i] * cp[i] + cl * l0[i] + cr * r0[i];
                if LINDBLAD {
                    acc += lm[i] * (gc * gain[i]) + rp[i] * (lc * loss[i]);
                }
                dst[i] = acc;
            }
        }
    }

    /// Adds `[x, V]` with `V = -(i gamma / 8){p, rho} - q [x, rho]` to the
    /// lower triangle of `out`.
    fn agarwal_into(&mut self, rho: &[C64], out: &mut [C64]) {
        let n = self.dim;
        let p = n + 2;
        let i = C64::new(0.0, 1.0);
        let f = -i * (self.gamma / 8.0);
        let q = self.agarwal_diffusion;
        // {p, rho}_mn = i(s_m r[m-1,n] - s_{m+1} r[m+1,n] - s_n r[m,n-1] + s_{n+1} r[m,n+1])
        // [x, rho]_mn =   s_m r[m-1,n] + s_{m+1} r[m+1,n] - s_n r[m,n-1] - s_{n+1} r[m,n+1]
        let c_up = f * i - q;
        let c_down = -f * i - q;
        let c_left = -f * i + q;
        let c_right = f * i + q;
        let v = &mut self.scratch;
        for c in 1..=n {
            let base = c * p;
            let len = n - c + 1;
            let cl = c_left * self.s_lo[c];
            let cr = c_right * self.s_hi[c];
            let k0 = base + c;
            let (rm, r0p) = (&rho[k0 - 1..k0 - 1 + len], &rho[k0 + 1..k0 + 1 + len]);
            let (rl, rr) = (&rho[k0 - p..k0 - p + len], &rho[k0 + p..k0 + p + len]);
            let (sl, sh) = (&self.s_lo[c..c + len], &self.s_hi[c..c + len]);
            let dst = &mut v[k0..k0 + len];
            for i in 0..len {
                dst[i] = c_up * (sl[i] * rm[i]) + c_down * (sh[i] * r0p[i]) + cl * rl[i] + cr * rr[i];
            }
        }
        // V is anti-Hermitian
        for c in 1..=n {
            for r in (c + 1)..=n {
                v[r * p + c] = -v[c * p + r].conj();
            }
        }
        for c in 1..=n {
            let base = c * p;
            let len = n - c + 1;
            let (slc, shc) = (self.s_lo[c], self.s_hi[c]);
            let k0 = base + c;
            let (vm, vp) = (&v[k0 - 1..k0 - 1 + len], &v[k0 + 1..k0 + 1 + len]);
            let (vl, vr) = (&v[k0 - p..k0 - p + len], &v[k0 + p..k0 + p + len]);
            let (sl, sh) = (&self.s_lo[c..c + len], &self.s_hi[c..c + len]);
            let dst = &mut out[k0..k0 + len];
            for i in 0..len {
                dst[i] += vm[i] * sl[i] + vp[i] * sh[i] - vl[i] * slc - vr[i] * shc;
            }
        }
    }

    /// Convenience wrapper returning a new matrix.
    pub fn evaluate(&mut self, rho: &CMatrix, x_c: f64) -> CMatrix {
        let mut out = CMatrix::zeros(self.dim, self.dim);
        self.apply(rho.as_slice(), x_c, out.as_mut_slice());
        out
    }
}
