//! Truncated Fock-space operators and states.
//!
//! Matrices are dense and column-major. The ladder operator is stored with
//! `a[(n - 1, n)] = sqrt(n)`; position and momentum are
//! `x = (a + a^dag) / sqrt(2)` and `p = i (a^dag - a) / sqrt(2)`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::{CMatrix, C64};

/// The unit system is fixed: `hbar = m = omega = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitSystem {
    pub hbar: f64,
    pub mass: f64,
    pub omega: f64,
}

impl UnitSystem {
    pub const NATURAL: UnitSystem = UnitSystem { hbar: 1.0, mass: 1.0, omega: 1.0 };
}

pub const HBAR: f64 = UnitSystem::NATURAL.hbar;
pub const MASS: f64 = UnitSystem::NATURAL.mass;
pub const OMEGA: f64 = UnitSystem::NATURAL.omega;

const ZERO: C64 = Complex64::new(0.0, 0.0);
const I: C64 = Complex64::new(0.0, 1.0);

/// Immutable operator set for one truncation `dim`.
#[derive(Clone, Debug)]
pub struct OperatorSet {
    pub dim: usize,
    pub a: CMatrix,
    pub a_dag: CMatrix,
    pub x_op: CMatrix,
    pub p_op: CMatrix,
    /// `p^2 / 2 + x^2 / 2` built from the truncated `x`, `p` (diagonal).
    pub h0: CMatrix,
    /// `sqrt(k / 2)` for `k = 0..dim`: the off-diagonal of `x` is
    /// `x[(k-1, k)] = x[(k, k-1)] = s[k]`.
    pub(crate) s: Vec<f64>,
    /// Diagonal of `h0`.
    pub(crate) h0_diag: Vec<f64>,
    /// Diagonal of `a a^dag` (`k + 1`, except `0` on the last level).
    pub(crate) aad_diag: Vec<f64>,
}

pub fn build_operator_set(dim: usize) -> Result<OperatorSet> {
    if dim < 2 {
        return Err(invalid(format!("Fock truncation must be >= 2, got {dim}")));
    }
    let sqrt_n: Vec<f64> = (0..=dim).map(|k| (k as f64).sqrt()).collect();
    let mut a = CMatrix::zeros(dim, dim);
    for n in 1..dim {
        a[(n - 1, n)] = C64::new(sqrt_n[n], 0.0);
    }
    let a_dag = a.adjoint();
    let r2 = std::f64::consts::FRAC_1_SQRT_2;
    let x_op = (&a + &a_dag) * C64::new(r2, 0.0);
    let p_op = (&a_dag - &a) * C64::new(0.0, r2);
    let h0 = (&p_op * &p_op + &x_op * &x_op) * C64::new(0.5, 0.0);

    let s = (0..dim).map(|k| (k as f64 / 2.0).sqrt()).collect();
    let h0_diag = (0..dim).map(|k| h0[(k, k)].re).collect();
    let aad_diag = (0..dim).map(|k| if k + 1 < dim { (k + 1) as f64 } else { 0.0 }).collect();
    Ok(OperatorSet { dim, a, a_dag, x_op, p_op, h0, s, h0_diag, aad_diag })
}

impl OperatorSet {
    pub fn identity(&self) -> CMatrix {
        CMatrix::identity(self.dim, self.dim)
    }

    pub fn number(&self) -> CMatrix {
        &self.a_dag * &self.a
    }

    /// `H = h0 - x_c x + x_c^2 / 2`, i.e. `p^2/2 + (x - x_c)^2/2`.
    pub fn hamiltonian(&self, x_c: f64) -> CMatrix {
        let mut h = &self.h0 - &self.x_op * C64::new(x_c, 0.0);
        for k in 0..self.dim {
            h[(k, k)] += 0.5 * x_c * x_c;
        }
        h
    }

    /// Ladder operators of the oscillator centered at `x_c`:
    /// `a~ = a - (x_c / sqrt 2) 1`.
    pub fn translated_ladder(&self, x_c: f64) -> (CMatrix, CMatrix) {
        let mut at = self.a.clone();
        let shift = x_c * std::f64::consts::FRAC_1_SQRT_2;
        for k in 0..self.dim {
            at[(k, k)] -= shift;
        }
        let at_dag = at.adjoint();
        (at, at_dag)
    }

    /// Unitary displacement `exp(-i x_c p)` computed by eigendecomposition of
    /// the truncated `p`. Near the top of the basis this differs from the
    /// true displacement; callers compare only the low-lying block.
    pub fn displacement(&self, x_c: f64) -> CMatrix {
        let eig = self.p_op.clone().symmetric_eigen();
        let phases = eig.eigenvalues.map(|lam| C64::from_polar(1.0, -x_c * lam));
        let v = &eig.eigenvectors;
        v * CMatrix::from_diagonal(&phases) * v.adjoint()
    }
}

pub fn hamiltonian(ops: &OperatorSet, x_c: f64) -> Result<CMatrix> {
    if !x_c.is_finite() {
        return Err(invalid(format!("x_c must be finite, got {x_c}")));
    }
    Ok(ops.hamiltonian(x_c))
}

pub fn translated_ladder(ops: &OperatorSet, x_c: f64) -> Result<(CMatrix, CMatrix)> {
    if !x_c.is_finite() {
        return Err(invalid(format!("x_c must be finite, got {x_c}")));
    }
    Ok(ops.translated_ladder(x_c))
}

/// Density matrix in the Fock basis.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    pub data: CMatrix,
}

impl DensityMatrix {
    pub fn new(data: CMatrix) -> Result<Self> {
        if data.nrows() != data.ncols() {
            return Err(invalid(format!("density matrix must be square, got {}x{}", data.nrows(), data.ncols())));
        }
        Ok(Self { data })
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    /// `|n><n|`.
    pub fn number_state(dim: usize, n: usize) -> Result<Self> {
        if n >= dim {
            return Err(invalid(format!("level {n} outside truncation {dim}")));
        }
        let mut data = CMatrix::zeros(dim, dim);
        data[(n, n)] = C64::new(1.0, 0.0);
        Ok(Self { data })
    }

    pub fn trace(&self) -> C64 {
        self.data.trace()
    }

    /// `Tr(rho^2)`, assuming Hermiticity.
    pub fn purity(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn hermiticity_deviation(&self) -> f64 {
        hermiticity_deviation(&self.data)
    }

    /// Population of the two highest Fock levels.
    pub fn top_population(&self) -> f64 {
        let n = self.dim();
        self.data[(n - 1, n - 1)].re + self.data[(n - 2, n - 2)].re
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> f64 {
        min_hermitian_eigenvalue(&self.data)
    }
}

pub fn ground_state(dim: usize) -> Result<DensityMatrix> {
    if dim < 2 {
        return Err(invalid(format!("Fock truncation must be >= 2, got {dim}")));
    }
    DensityMatrix::number_state(dim, 0)
}

/// `Tr(rho op)`.
pub fn expectation_complex(rho: &DensityMatrix, op: &CMatrix) -> Result<C64> {
    let n = rho.dim();
    if op.nrows() != n || op.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: op.nrows() });
    }
    Ok(trace_product(&rho.data, op))
}

/// `Tr(rho op)` for Hermitian `op`; the imaginary residue is checked and
/// dropped.
pub fn expectation(rho: &DensityMatrix, op: &CMatrix) -> Result<f64> {
    let z = expectation_complex(rho, op)?;
    let scale = 1.0f64.max(z.re.abs());
    if z.im.abs() > 1e-10 * scale {
        return Err(invalid(format!(
            "expectation of a Hermitian operator has imaginary part {:e}; state or operator not Hermitian",
            z.im
        )));
    }
    Ok(z.re)
}

/// `Tr(A B)` without forming the product.
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> C64 {
    let n = a.nrows();
    let mut acc = ZERO;
    for j in 0..n {
        for k in 0..n {
            acc += a[(j, k)] * b[(k, j)];
        }
    }
    acc
}

pub fn hermiticity_deviation(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut dev: f64 = 0.0;
    for j in 0..n {
        for i in j..n {
            dev = dev.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    dev
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

/// Smallest eigenvalue of the Hermitian part of `m`.
///
/// Entries below `EPSILON * max|m|` are flushed to zero first: the QR
/// iteration underflows on coherences spanning hundreds of decades, and the
/// flush moves each eigenvalue by at most `dim * EPSILON * max|m|`, below the
/// solver's own backward error.
pub fn min_hermitian_eigenvalue(m: &CMatrix) -> f64 {
    let mut herm: DMatrix<C64> = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let floor = f64::EPSILON * max_abs(&herm);
    herm.iter_mut().filter(|z| z.norm() < floor).for_each(|z| *z = C64::new(0.0, 0.0));
    herm.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
}

/// `[A, B]`.
pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b - b * a
}

/// `{A, B}`.
pub fn anticommutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b + b * a
}

pub(crate) fn imag_unit() -> C64 {
    I
}
