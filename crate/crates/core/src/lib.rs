//! Simulation core for a quantum particle in a harmonic trap whose center
//! follows inertial Ornstein-Uhlenbeck noise.
//!
//! The particle's density matrix is evolved in a truncated Fock basis under
//! one of three dissipators (static Lindblad, translated Lindblad, Agarwal).
//! Because the Hamiltonian is quadratic and all dissipators are at most
//! quadratic in `x` and `p`, Gaussian states stay Gaussian; [`moments`]
//! integrates the exact first- and second-moment equations as an independent
//! check on every density-matrix result.
//!
//! Units are natural throughout: `hbar = m = omega = 1`, lengths in
//! `sqrt(hbar / m omega)`, times in `1 / omega`.

pub mod dissipators;
pub mod ensemble;
pub mod error;
pub mod evolver;
pub mod fock;
pub mod moments;
pub mod observables;
pub mod ou;
pub mod wigner;

pub use dissipators::{DissipatorKind, DissipatorSpec, ThermalParams};
pub use error::{Error, Result};
pub use evolver::{Diagnostics, Record, SimulationConfig, TrajectorySeries};
pub use fock::{DensityMatrix, OperatorSet};
pub use moments::{FpeCoefficients, MomentState};
pub use observables::MsdSeries;
pub use ou::{OuParams, OuTrajectory};
pub use wigner::{AnalyticGaussian, PhaseSpaceGrid, WignerField};

/// Complex scalar used for all operator and state entries.
pub type C64 = num_complex::Complex64;

/// Dense complex matrix, column-major (nalgebra convention).
pub type CMatrix = nalgebra::DMatrix<C64>;
