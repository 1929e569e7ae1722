//! Periodic planewave mean-field solver with cheap, fully computable
//! a posteriori bounds on the ground-state energy error.
//!
//! The crate is organized around the pipeline:
//!
//! * [`pw_basis`] — lattices, planewave spheres, FFT-backed periodic fields;
//! * [`model`] — external potentials, densities, the mean-field energy and
//!   Hamiltonian;
//! * [`linear_solver`] — exact diagonalization of the projected operator;
//! * [`scf`] — the self-consistent field loop with mixing and history capture;
//! * [`estimators`] — the residual-based bound ladder (full inversion,
//!   Neumann truncations, guaranteed remainders, shift optimization) and the
//!   split of the certified error into SCF and discretization parts;
//! * [`kpoints`] — Brillouin-zone sampling: per-fiber solves, densities and
//!   error components aggregated per unit cell;
//! * [`cli`] — batch front door: config files, reference artifacts, CSV/JSON
//!   traces.

// Link against the system OpenBLAS (provides BLAS and LAPACK symbols).
use openblas_src as _;

pub mod cli;
pub mod error;
pub mod estimators;
pub mod kpoints;
pub mod linear_solver;
pub mod model;
pub mod pw_basis;
pub mod scf;

pub use error::{Error, Result};
