//! Predictor-corrector time stepping of the density matrix.
//!
//! The scheme is the two-stage Heun form
//! `rho_m = rho + (dt/2) G(rho, x_c(t))`, `rho' = rho + dt G(rho_m, x_c(t))`.
//!
//! [`evolve`] advances the deviation `d = rho - |0><0|` rather than `rho`.
//! The generator is linear, so `G(|0><0| + d) = G(d) + S` with a source `S`
//! that is cheap to form. The update is the same arithmetic on the same
//! scheme, but observables such as the MSD `Tr(d x^2)` are read without
//! cancelling against the ground-state `1/2`.
//!
//! By default the state is held in a displaced frame,
//! `rho = D(alpha) rho' D(alpha)^dag`, whose center `alpha` moves with
//! `d alpha / dt = Tr(a G(rho'))`, so `<a>` in the frame stays zero. Every
//! generator here is at most quadratic, so the frame equation is the same
//! generator with a different linear term and no approximation. The packet
//! then sits at the origin of the Fock basis however far the trap wanders,
//! and the integrator never has to resolve the fast phase rotation of a
//! displaced packet.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::dissipators::{
    pad_into, padded_index, padded_len, unpad_into, DissipatorKind, DissipatorSpec, GeneratorKernel, ThermalParams,
};
use crate::error::{invalid, Error, Result};
use crate::fock::{build_operator_set, min_hermitian_eigenvalue, DensityMatrix, OperatorSet};
use crate::moments::ForceExponent;
use crate::ou::{fmt17, step_count, OuParams, OuTrajectory};
use crate::{CMatrix, C64};

/// Population above which a warning is logged once per trajectory.
pub const TRUNCATION_WARN: f64 = 1e-6;
/// Population above which a trajectory is aborted.
pub const TRUNCATION_LIMIT: f64 = 1e-3;
/// Target record count when no stride is given.
pub const DEFAULT_RECORDS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub dt: f64,
    pub t_final: f64,
    pub dim: usize,
    pub n_traj: usize,
    pub base_seed: u64,
    /// Steps between records; `None` picks about [`DEFAULT_RECORDS`].
    pub record_stride: Option<usize>,
    /// Extra log-spaced records per decade of `t`, for slope fits.
    pub log_records_per_decade: Option<usize>,
    pub dissipator: DissipatorSpec,
    pub ou: OuParams,
    pub force_exponent: ForceExponent,
    /// Evaluate the corrector at `x_c(t + dt/2)` instead of `x_c(t)`.
    pub corrector_midpoint: bool,
    /// Eigenvalue diagnostics every this many records.
    pub eig_every_records: usize,
    /// Basis in which the density matrix is stored.
    #[serde(default)]
    pub frame: Frame,
}

/// Where the Fock basis is centered.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    /// Fixed at the origin.
    Lab,
    /// Following the state's mean.
    #[default]
    Displaced,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_final: 500.0,
            dim: 24,
            n_traj: 200,
            base_seed: 0,
            record_stride: None,
            log_records_per_decade: None,
            dissipator: DissipatorSpec::new(
                DissipatorKind::StaticLindblad,
                ThermalParams::new(1e-8, 1e-2).expect("default rates are valid"),
            ),
            ou: OuParams::default(),
            force_exponent: ForceExponent::OmegaSquared,
            corrector_midpoint: false,
            eig_every_records: 100,
            frame: Frame::Displaced,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_final >= self.dt && self.t_final.is_finite()) {
            return Err(invalid(format!("t_final ({}) must be >= dt ({})", self.t_final, self.dt)));
        }
        if self.dim < 2 {
            return Err(invalid(format!("dim must be >= 2, got {}", self.dim)));
        }
        if self.n_traj == 0 {
            return Err(invalid("n_traj must be >= 1"));
        }
        if self.record_stride == Some(0) {
            return Err(invalid("record_stride must be >= 1"));
        }
        if self.log_records_per_decade == Some(0) {
            return Err(invalid("log_records_per_decade must be >= 1"));
        }
        if self.eig_every_records == 0 {
            return Err(invalid("eig_every_records must be >= 1"));
        }
        self.ou.validate()
    }

    pub fn n_steps(&self) -> usize {
        step_count(self.dt, self.t_final)
    }

    pub fn stride(&self) -> usize {
        self.record_stride.unwrap_or_else(|| (self.n_steps() / DEFAULT_RECORDS).max(1))
    }

    /// Seed of trajectory `i`.
    pub fn seed(&self, i: usize) -> u64 {
        self.base_seed.wrapping_add(i as u64)
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.n_traj).map(|i| self.seed(i)).collect()
    }

    pub fn check_trajectory(&self, traj: &OuTrajectory) -> Result<()> {
        if traj.dt != self.dt {
            return Err(invalid(format!("trajectory dt {} differs from config dt {}", traj.dt, self.dt)));
        }
        if traj.len() < self.n_steps() + 1 {
            return Err(invalid(format!("trajectory has {} samples, need {}", traj.len(), self.n_steps() + 1)));
        }
        Ok(())
    }

    /// Drive used by the corrector of step `k`.
    pub fn step_drive(&self, traj: &OuTrajectory, k: usize) -> f64 {
        if self.corrector_midpoint {
            0.5 * (traj.x_c(k) + traj.x_c(k + 1))
        } else {
            traj.x_c(k)
        }
    }
}

/// Step indices at which observables are recorded: `0`, every stride, the
/// last step, and optional log-spaced points.
pub fn record_steps(cfg: &SimulationConfig) -> Result<Vec<usize>> {
    cfg.validate()?;
    let n = cfg.n_steps();
    let stride = cfg.stride();
    let mut steps: Vec<usize> = (0..=n).step_by(stride).collect();
    steps.push(n);
    if let Some(per_decade) = cfg.log_records_per_decade {
        let mut j = 0usize;
        loop {
            let t = cfg.dt * 10f64.powf(j as f64 / per_decade as f64);
            let k = (t / cfg.dt).round() as usize;
            if k > n {
                break;
            }
            steps.push(k);
            j += 1;
        }
    }
    steps.sort_unstable();
    steps.dedup();
    Ok(steps)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub trace_dev: f64,
    pub herm_dev: f64,
    /// Most recent smallest eigenvalue of the Hermitian part.
    pub min_eig: f64,
    /// Population of the top two levels.
    pub top_pop: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub t: f64,
    pub mean_x: f64,
    pub mean_p: f64,
    pub mean_x2: f64,
    /// `<x^2>(t) - <x^2>(0)`, read directly from the deviation.
    pub msd: f64,
    pub purity: f64,
    pub diag: Diagnostics,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySeries {
    pub seed: u64,
    pub records: Vec<Record>,
    /// Final state in the frame; the lab state is it displaced by
    /// `final_offset`.
    pub final_state: Option<DensityMatrix>,
    /// Phase-space center `(x, p)` of the frame at the end.
    pub final_offset: [f64; 2],
}

impl TrajectorySeries {
    pub fn msd(&self) -> Vec<(f64, f64)> {
        self.records.iter().map(|r| (r.t, r.msd)).collect()
    }

    /// Worst values over all records.
    pub fn worst(&self) -> Diagnostics {
        let mut w = Diagnostics { trace_dev: 0.0, herm_dev: 0.0, min_eig: f64::INFINITY, top_pop: 0.0 };
        for r in &self.records {
            w.trace_dev = w.trace_dev.max(r.diag.trace_dev);
            w.herm_dev = w.herm_dev.max(r.diag.herm_dev);
            w.min_eig = w.min_eig.min(r.diag.min_eig);
            w.top_pop = w.top_pop.max(r.diag.top_pop);
        }
        w
    }

    pub fn max_purity(&self) -> f64 {
        self.records.iter().map(|r| r.purity).fold(f64::NEG_INFINITY, f64::max)
    }

    /// `t,mean_x,mean_p,mean_x2,purity,trace_dev,min_eig,top_pop`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,mean_x,mean_p,mean_x2,purity,trace_dev,min_eig,top_pop")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                fmt17(r.t),
                fmt17(r.mean_x),
                fmt17(r.mean_p),
                fmt17(r.mean_x2),
                fmt17(r.purity),
                fmt17(r.diag.trace_dev),
                fmt17(r.diag.min_eig),
                fmt17(r.diag.top_pop)
            )?;
        }
        Ok(())
    }
}

/// Nonzero entries of an operator as `(padded index of rho_ji, O_ij)`, so
/// that `Tr(rho O) = sum rho[k] v`.
type Sparse = Vec<(usize, C64)>;

fn sparse(m: &CMatrix) -> Sparse {
    let n = m.nrows();
    let mut out = Vec::new();
    for j in 0..m.ncols() {
        for i in 0..n {
            if m[(i, j)] != C64::new(0.0, 0.0) {
                out.push((padded_index(n, j, i), m[(i, j)]));
            }
        }
    }
    out
}

fn trace_with(rho: &[C64], op: &Sparse) -> C64 {
    op.iter().map(|&(k, v)| rho[k] * v).sum()
}

/// Reusable stepping workspace for one dissipator and truncation.
///
/// States are zero-bordered buffers of length [`padded_len`]; see
/// [`padded_index`] for the layout.
#[derive(Clone, Debug)]
pub struct Stepper {
    dim: usize,
    dt: f64,
    kernel: GeneratorKernel,
    /// `G(|0><0|)` without its linear part.
    src0: Vec<C64>,
    k: Vec<C64>,
    mid: Vec<C64>,
    a: Sparse,
    x: Sparse,
    p: Sparse,
    x2: Sparse,
}

/// Entries below this magnitude are set to zero after every step.
///
/// Strong damping drives the deep Fock tail of a near-vacuum state toward
/// zero geometrically; once it reaches the subnormal range every operation
/// on it costs ~100 cycles. No observable or diagnostic can resolve 1e-250.
pub const FLUSH_BELOW: f64 = 1e-250;

fn flush_subnormal_range(d: &mut [C64]) {
    for z in d.iter_mut() {
        if z.re.abs() < FLUSH_BELOW {
            z.re = 0.0;
        }
        if z.im.abs() < FLUSH_BELOW {
            z.im = 0.0;
        }
    }
}

/// Adds `-i[mu a + mu^* a^dag, |0><0|]`.
fn add_linear_ground(dim: usize, mu: C64, out: &mut [C64]) {
    out[padded_index(dim, 1, 0)] += C64::new(0.0, -1.0) * mu.conj();
    out[padded_index(dim, 0, 1)] += C64::new(0.0, 1.0) * mu;
}

impl Stepper {
    pub fn new(ops: &OperatorSet, spec: &DissipatorSpec, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid(format!("dt must be positive, got {dt}")));
        }
        let n = ops.dim;
        let len = padded_len(n);
        let zero = C64::new(0.0, 0.0);
        let mut kernel = GeneratorKernel::new(ops, spec);
        let mut ground = vec![zero; len];
        ground[padded_index(n, 0, 0)] = C64::new(1.0, 0.0);
        let mut src0 = vec![zero; len];
        kernel.apply_drive_padded(&ground, zero, &mut src0);
        Ok(Self {
            dim: n,
            dt,
            kernel,
            src0,
            k: vec![zero; len],
            mid: vec![zero; len],
            a: sparse(&ops.a),
            x: sparse(&ops.x_op),
            p: sparse(&ops.p_op),
            x2: sparse(&(&ops.x_op * &ops.x_op)),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Zeroed state buffer.
    pub fn zeros(&self) -> Vec<C64> {
        vec![C64::new(0.0, 0.0); padded_len(self.dim)]
    }

    /// Writes `d rho' / dt` for `rho' = |0><0| + d` into `out` and returns
    /// `d alpha / dt`; without `framed` the frame is held still.
    fn derivative(&mut self, d: &[C64], alpha: C64, x_c: f64, framed: bool, out: &mut [C64]) -> C64 {
        let n = self.dim;
        let mu = self.kernel.drive(x_c, alpha);
        self.kernel.apply_drive_padded(d, mu, out);
        for (o, &s) in out.iter_mut().zip(&self.src0) {
            *o += s;
        }
        add_linear_ground(n, mu, out);
        if !framed {
            return C64::new(0.0, 0.0);
        }
        // Moving the frame adds -[adot a^dag - adot^* a, rho'], which changes
        // <a> at the rate -adot Tr([a, a^dag] rho') with the truncated
        // commutator diag(1, ..., 1, 1 - dim).
        let top = d[padded_index(n, n - 1, n - 1)].re;
        let adot = trace_with(out, &self.a) / (1.0 - n as f64 * top);
        let mu_f = C64::new(0.0, 1.0) * adot.conj();
        self.kernel.add_linear_padded(d, mu_f, out);
        add_linear_ground(n, mu_f, out);
        adot
    }

    fn advance(&mut self, d: &mut [C64], alpha: &mut C64, x_pred: f64, x_corr: f64, framed: bool) {
        let h = 0.5 * self.dt;
        let mut k = std::mem::take(&mut self.k);
        let mut mid = std::mem::take(&mut self.mid);
        let adot = self.derivative(d, *alpha, x_pred, framed, &mut k);
        for ((m, &di), &ki) in mid.iter_mut().zip(d.iter()).zip(&k) {
            *m = di + ki * h;
        }
        let adot = self.derivative(&mid, *alpha + adot * h, x_corr, framed, &mut k);
        let dt = self.dt;
        for (di, &ki) in d.iter_mut().zip(&k) {
            *di += ki * dt;
        }
        *alpha += adot * dt;
        flush_subnormal_range(d);
        self.k = k;
        self.mid = mid;
    }

    /// One lab-frame step of the deviation `d`, predictor at `x_pred`,
    /// corrector at `x_corr`.
    pub fn step_deviation(&mut self, d: &mut [C64], x_pred: f64, x_corr: f64) {
        self.advance(d, &mut C64::new(0.0, 0.0), x_pred, x_corr, false);
    }

    /// One step of the deviation `d` in the frame centered at `alpha`,
    /// which moves along.
    pub fn step_displaced(&mut self, d: &mut [C64], alpha: &mut C64, x_pred: f64, x_corr: f64) {
        self.advance(d, alpha, x_pred, x_corr, true);
    }

    /// The literal two-stage update on a full density matrix.
    pub fn step_full(&mut self, rho: &mut [C64], x_pred: f64, x_corr: f64) {
        let dt = self.dt;
        self.kernel.apply_padded(rho, x_pred, &mut self.k);
        for ((m, &r), &k) in self.mid.iter_mut().zip(rho.iter()).zip(&self.k) {
            let pred = r + k * dt;
            *m = (r + pred) * 0.5;
        }
        self.kernel.apply_padded(&self.mid, x_corr, &mut self.k);
        for (r, &k) in rho.iter_mut().zip(&self.k) {
            *r += k * dt;
        }
    }

    /// Observables of `D(alpha) (|0><0| + d) D(alpha)^dag`.
    fn record(&self, d: &[C64], alpha: C64, t: f64, min_eig: f64) -> Record {
        let n = self.dim;
        let at = |i: usize, j: usize| d[padded_index(n, i, j)];
        let tr = (0..n).map(|i| at(i, i)).sum::<C64>();
        let mut herm: f64 = 0.0;
        let mut sq = 0.0;
        for j in 0..n {
            for i in 0..n {
                herm = herm.max((at(i, j) - at(j, i).conj()).norm());
                sq += at(i, j).norm_sqr();
            }
        }
        let (xb, pb) = (std::f64::consts::SQRT_2 * alpha.re, std::f64::consts::SQRT_2 * alpha.im);
        let x_in = trace_with(d, &self.x).re;
        let msd = trace_with(d, &self.x2).re + xb * (xb + 2.0 * x_in);
        Record {
            t,
            mean_x: xb + x_in,
            mean_p: pb + trace_with(d, &self.p).re,
            mean_x2: 0.5 + msd,
            msd,
            purity: 1.0 + 2.0 * at(0, 0).re + sq,
            diag: Diagnostics {
                trace_dev: tr.norm(),
                herm_dev: herm,
                min_eig,
                top_pop: (n - 2..n).map(|i| at(i, i).re + if i == 0 { 1.0 } else { 0.0 }).sum::<f64>().abs(),
            },
        }
    }
}

/// `|0><0| + d` as a plain matrix.
fn full_from_deviation(d: &[C64], dim: usize) -> CMatrix {
    let mut m = CMatrix::zeros(dim, dim);
    unpad_into(dim, d, m.as_mut_slice());
    m[(0, 0)] += C64::new(1.0, 0.0);
    m
}

/// One predictor-corrector step of `rho` with `x_c(t)` in both stages.
pub fn step(rho: &DensityMatrix, t: f64, x_c_t: f64, cfg: &SimulationConfig) -> Result<DensityMatrix> {
    if !x_c_t.is_finite() {
        return Err(invalid(format!("x_c must be finite, got {x_c_t}")));
    }
    let n = rho.dim();
    let ops = build_operator_set(n)?;
    let mut stepper = Stepper::new(&ops, &cfg.dissipator, cfg.dt)?;
    let mut buf = stepper.zeros();
    pad_into(n, rho.data.as_slice(), &mut buf);
    stepper.step_full(&mut buf, x_c_t, x_c_t);
    let mut data = CMatrix::zeros(n, n);
    unpad_into(n, &buf, data.as_mut_slice());
    if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NumericalBlowup { t: t + cfg.dt });
    }
    Ok(DensityMatrix { data })
}

/// Evolves the ground state along `traj`.
pub fn evolve(traj: &OuTrajectory, cfg: &SimulationConfig) -> Result<TrajectorySeries> {
    evolve_with(traj, cfg, false)
}

/// As [`evolve`], optionally keeping the final density matrix.
pub fn evolve_with(traj: &OuTrajectory, cfg: &SimulationConfig, keep_final: bool) -> Result<TrajectorySeries> {
    cfg.check_trajectory(traj)?;
    let steps = record_steps(cfg)?;
    let ops = build_operator_set(cfg.dim)?;
    let mut stepper = Stepper::new(&ops, &cfg.dissipator, cfg.dt)?;
    let n = cfg.dim;
    let mut d = stepper.zeros();
    let mut alpha = C64::new(0.0, 0.0);
    let mut records = Vec::with_capacity(steps.len());
    let last = *steps.last().expect("record grid is never empty");
    let mut next = 0;
    let mut min_eig = f64::NAN;
    let mut warned = false;
    for k in 0..=last {
        if steps[next] == k {
            let t = k as f64 * cfg.dt;
            if d.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::NumericalBlowup { t });
            }
            if next % cfg.eig_every_records == 0 || k == last {
                min_eig = min_hermitian_eigenvalue(&full_from_deviation(&d, n));
            }
            let rec = stepper.record(&d, alpha, t, min_eig);
            let top = rec.diag.top_pop;
            if top > TRUNCATION_LIMIT {
                return Err(Error::Truncation { t, top_pop: top, limit: TRUNCATION_LIMIT });
            }
            if top > TRUNCATION_WARN && !warned {
                log::warn!("seed {}: top-level population {top:.3e} at t = {t} exceeds {TRUNCATION_WARN:e}", traj.seed);
                warned = true;
            }
            records.push(rec);
            next += 1;
        }
        if k == last {
            break;
        }
        match cfg.frame {
            Frame::Lab => stepper.step_deviation(&mut d, traj.x_c(k), cfg.step_drive(traj, k)),
            Frame::Displaced => stepper.step_displaced(&mut d, &mut alpha, traj.x_c(k), cfg.step_drive(traj, k)),
        }
    }
    let final_state = keep_final.then(|| DensityMatrix { data: full_from_deviation(&d, n) });
    let final_offset = [std::f64::consts::SQRT_2 * alpha.re, std::f64::consts::SQRT_2 * alpha.im];
    Ok(TrajectorySeries { seed: traj.seed, records, final_state, final_offset })
}
