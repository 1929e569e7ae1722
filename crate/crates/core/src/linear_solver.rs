//! Exact diagonalization of the projected operator `Π_N A Π_N`, Aufbau
//! selection of the occupied cluster, and spectral-gap verification.
//!
//! Bases stay desk-scale (at most a few thousand planewaves), so a dense
//! Hermitian solve is both simpler and more reliable than an iterative one.

use std::sync::Arc;

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, UPLO};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{ModelSpec, OrbitalSet, TotalPotential};
use crate::pw_basis::{PeriodicField, PlanewaveBasis, SphereMask};

/// Refuse Aufbau occupation when the gap `ε_{N_el+1} - ε_{N_el}` is below
/// this (Hartree).
pub const DEFAULT_GAP_TOL: f64 = 1e-8;

/// The lowest eigenpairs of a projected operator, eigenvectors embedded in
/// the full reference basis (zero outside the mask).
#[derive(Debug, Clone)]
pub struct SpectralSlice {
    n_el: usize,
    eigenvalues: Vec<f64>,
    eigenvectors: Vec<PeriodicField>,
    gap: f64,
}

impl SpectralSlice {
    pub fn n_el(&self) -> usize {
        self.n_el
    }

    /// Ascending; at least `n_el + 1` entries.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &[PeriodicField] {
        &self.eigenvectors
    }

    /// `ε_{N_el+1} - ε_{N_el}`.
    pub fn gap(&self) -> f64 {
        self.gap
    }

    /// Aufbau occupation: the lowest `n_el` pairs as an orbital set.
    pub fn occupied(&self, mask: &SphereMask) -> Result<OrbitalSet> {
        OrbitalSet::new(
            mask.clone(),
            self.eigenvectors[..self.n_el].to_vec(),
            self.eigenvalues[..self.n_el].to_vec(),
        )
    }
}

/// Dense matrix of `Π_N (-½Δ + V_tot + shift) Π_N` in the mask's planewave
/// order: kinetic on the diagonal plus the potential's Fourier coefficients
/// at difference frequencies.
pub fn assemble_projected(
    vtot: &TotalPotential,
    basis: &Arc<PlanewaveBasis>,
    mask: &SphereMask,
    shift: f64,
) -> Array2<Complex64> {
    let m = mask.len();
    let scale = 1.0 / basis.lattice().volume().sqrt();
    let kin = basis.kinetic_energies();
    let gv = basis.gvectors();
    let mut mat = Array2::<Complex64>::zeros((m, m));
    for (col, &j) in mask.indices().iter().enumerate() {
        for (row, &i) in mask.indices().iter().enumerate() {
            let d = [
                gv[i][0] - gv[j][0],
                gv[i][1] - gv[j][1],
                gv[i][2] - gv[j][2],
            ];
            let mut entry = vtot.fourier_at(&d) * scale;
            if i == j {
                entry += Complex64::new(kin[i] + shift, 0.0);
            }
            mat[(row, col)] = entry;
        }
    }
    // The grid DFT of a real potential is Hermitian only to round-off;
    // symmetrize so downstream factorizations see an exactly Hermitian matrix.
    for col in 0..m {
        for row in 0..col {
            let h = 0.5 * (mat[(row, col)] + mat[(col, row)].conj());
            mat[(row, col)] = h;
            mat[(col, row)] = h.conj();
        }
        let d = mat[(col, col)].re;
        mat[(col, col)] = Complex64::new(d, 0.0);
    }
    mat
}

/// Lowest `count` eigenpairs of `Π_N (H_ρ + shift) Π_N` for a prepared total
/// potential. Used by the SCF loop, the estimators and the Bloch fibers.
pub fn diagonalize_with_potential(
    vtot: &TotalPotential,
    basis: &Arc<PlanewaveBasis>,
    mask: &SphereMask,
    shift: f64,
    n_el: usize,
    count: usize,
    gap_tol: f64,
) -> Result<SpectralSlice> {
    if count < n_el + 1 {
        return Err(Error::Model(format!(
            "need at least N_el + 1 = {} eigenpairs, requested {count}",
            n_el + 1
        )));
    }
    if count > mask.len() {
        return Err(Error::Basis(format!(
            "requested {count} eigenpairs from a {}-dimensional space",
            mask.len()
        )));
    }
    let mat = assemble_projected(vtot, basis, mask, shift);
    let (vals, vecs): (Array1<f64>, Array2<Complex64>) = mat
        .eigh(UPLO::Lower)
        .map_err(|e| Error::InconsistentInputs(format!("dense eigensolver failed: {e}")))?;

    // LAPACK returns ascending eigenvalues; keep a defensive sort.
    let mut order: Vec<usize> = (0..mask.len()).collect();
    order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));

    let mut eigenvalues = Vec::with_capacity(count);
    let mut eigenvectors = Vec::with_capacity(count);
    let mut worst_residual: f64 = 0.0;
    for &idx in order.iter().take(count) {
        let lambda = vals[idx];
        // This LAPACK binding hands back eigenvectors of the row-major
        // buffer reinterpreted column-major, i.e. of `Aᵀ = conj(A)`; the
        // conjugated column is the eigenvector of `A`. The residual check
        // below fails loudly if the convention ever changes.
        let col = vecs.column(idx).mapv(|c| c.conj());

        let resid = mat.dot(&col) - col.mapv(|c| c * lambda);
        let residual = resid.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        worst_residual = worst_residual.max(residual);

        // Phase fix: make the largest-modulus coefficient real positive.
        let mut best = 0usize;
        let mut best_norm = 0.0;
        for (i, c) in col.iter().enumerate() {
            if c.norm() > best_norm {
                best_norm = c.norm();
                best = i;
            }
        }
        let phase = col[best].conj() / best_norm;

        let mut coeffs = vec![Complex64::default(); basis.num_planewaves()];
        for (row, &i) in mask.indices().iter().enumerate() {
            coeffs[i] = col[row] * phase;
        }
        eigenvalues.push(lambda);
        eigenvectors.push(PeriodicField::new(basis.clone(), coeffs)?);
    }
    if worst_residual > 1e-10 * (1.0 + eigenvalues.last().unwrap().abs()) {
        return Err(Error::InconsistentInputs(format!(
            "eigensolver residual {worst_residual:.3e} inside V_N"
        )));
    }

    let gap = eigenvalues[n_el] - eigenvalues[n_el - 1];
    if gap < gap_tol {
        return Err(Error::DegenerateFermi { gap, tol: gap_tol });
    }

    Ok(SpectralSlice {
        n_el,
        eigenvalues,
        eigenvectors,
        gap,
    })
}

/// Lowest `count` eigenpairs of `Π_N (H_ρ + shift) Π_N`, Aufbau-ready.
pub fn diagonalize_projected(
    model: &ModelSpec,
    rho: &PeriodicField,
    shift: f64,
    mask: &SphereMask,
    count: usize,
    gap_tol: f64,
) -> Result<SpectralSlice> {
    let vtot = TotalPotential::new(model, rho);
    diagonalize_with_potential(&vtot, model.basis(), mask, shift, model.n_el(), count, gap_tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{density, random_potential_1d, ExternalPotential, Functional};
    use crate::pw_basis::{build_basis, Lattice, PeriodicField};
    use approx::assert_relative_eq;
    use num_complex::Complex64;

    fn free_model(basis: &Arc<PlanewaveBasis>, n_el: usize) -> (ModelSpec, PeriodicField) {
        let model =
            ModelSpec::new(n_el, ExternalPotential::zero(basis.clone()), Functional::Linear)
                .unwrap();
        let e0 = PeriodicField::mode(basis.clone(), &[0, 0, 0]).unwrap();
        let rho = e0.scaled(Complex64::new(
            n_el as f64 / basis.lattice().volume().sqrt(),
            0.0,
        ));
        (model, rho)
    }

    #[test]
    fn free_spectrum() {
        let basis = build_basis(&Lattice::line(10.0).unwrap(), 5.0, &[]).unwrap();
        let (model, rho) = free_model(&basis, 1);
        let mask = basis.full_mask();
        let slice = diagonalize_projected(&model, &rho, 0.0, &mask, 4, DEFAULT_GAP_TOL).unwrap();
        let g = 2.0 * std::f64::consts::PI / 10.0;
        assert_relative_eq!(slice.eigenvalues()[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(slice.eigenvalues()[1], 0.5 * g * g, epsilon = 1e-12);
        assert_relative_eq!(slice.eigenvalues()[2], 0.5 * g * g, epsilon = 1e-12);
        assert_relative_eq!(slice.gap(), 0.5 * g * g, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_fermi_is_refused() {
        // With two electrons the Fermi level sits inside the ±G doublet.
        let basis = build_basis(&Lattice::line(10.0).unwrap(), 5.0, &[]).unwrap();
        let (model, rho) = free_model(&basis, 2);
        let mask = basis.full_mask();
        let err = diagonalize_projected(&model, &rho, 0.0, &mask, 4, DEFAULT_GAP_TOL);
        assert!(matches!(err, Err(Error::DegenerateFermi { .. })));
    }

    #[test]
    fn shift_equivariance() {
        let basis = build_basis(&Lattice::line(10.0).unwrap(), 40.0, &[]).unwrap();
        let pot = random_potential_1d(&basis, 4, 5.0, 1.1, 100.0).unwrap();
        let model = ModelSpec::new(1, pot, Functional::Linear).unwrap();
        let e0 = PeriodicField::mode(basis.clone(), &[0, 0, 0]).unwrap();
        let rho = e0.scaled(Complex64::new(1.0 / 10.0f64.sqrt(), 0.0));
        let mask = basis.mask(20.0).unwrap();

        let a = diagonalize_projected(&model, &rho, 0.0, &mask, 3, DEFAULT_GAP_TOL).unwrap();
        let b = diagonalize_projected(&model, &rho, 1.0, &mask, 3, DEFAULT_GAP_TOL).unwrap();
        for i in 0..3 {
            assert_relative_eq!(a.eigenvalues()[i] + 1.0, b.eigenvalues()[i], epsilon = 1e-11);
        }
        // The ground state is isolated; excited states of the parity-even 1D
        // potential come in quasi-degenerate doublets, so compare those as a
        // subspace (the 2×2 overlap must be unitary).
        let diff = a.eigenvectors()[0].sub(&b.eigenvectors()[0]).norm_l2();
        assert!(diff < 1e-9, "ground state moved by {diff}");
        let mut gram = [[Complex64::default(); 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                gram[i][j] = a.eigenvectors()[i + 1].inner(&b.eigenvectors()[j + 1]);
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                let ggh: Complex64 = (0..2).map(|k| gram[i][k] * gram[j][k].conj()).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (ggh - Complex64::new(target, 0.0)).norm() < 1e-9,
                    "doublet subspace rotated"
                );
            }
        }
    }

    #[test]
    fn occupied_orbitals_are_in_mask() {
        let basis = build_basis(&Lattice::line(10.0).unwrap(), 60.0, &[]).unwrap();
        let pot = random_potential_1d(&basis, 9, 8.0, 1.1, 100.0).unwrap();
        let model = ModelSpec::new(3, pot, Functional::Linear).unwrap();
        let e0 = PeriodicField::mode(basis.clone(), &[0, 0, 0]).unwrap();
        let rho = e0.scaled(Complex64::new(3.0 / 10.0f64.sqrt(), 0.0));
        let mask = basis.mask(25.0).unwrap();
        let slice = diagonalize_projected(&model, &rho, 0.0, &mask, 4, DEFAULT_GAP_TOL).unwrap();
        let orbs = slice.occupied(&mask).unwrap();
        assert_eq!(orbs.len(), 3);
        assert!(orbs.orthonormality_defect() < 1e-10);
        let rho_new = density(&orbs).unwrap();
        assert_relative_eq!(crate::model::integral(&rho_new), 3.0, epsilon = 1e-10);
    }

    #[test]
    fn variational_monotonicity() {
        let basis = build_basis(&Lattice::line(10.0).unwrap(), 80.0, &[]).unwrap();
        let pot = random_potential_1d(&basis, 21, 8.0, 1.1, 100.0).unwrap();
        let model = ModelSpec::new(2, pot, Functional::Linear).unwrap();
        let e0 = PeriodicField::mode(basis.clone(), &[0, 0, 0]).unwrap();
        let rho = e0.scaled(Complex64::new(2.0 / 10.0f64.sqrt(), 0.0));

        let mut previous: Option<Vec<f64>> = None;
        for ecut in [10.0, 20.0, 40.0, 80.0] {
            let mask = basis.mask(ecut).unwrap();
            let slice =
                diagonalize_projected(&model, &rho, 0.0, &mask, 3, DEFAULT_GAP_TOL).unwrap();
            if let Some(prev) = &previous {
                for i in 0..3 {
                    assert!(
                        slice.eigenvalues()[i] <= prev[i] + 1e-10,
                        "eigenvalue {i} grew when enlarging the basis"
                    );
                }
            }
            previous = Some(slice.eigenvalues().to_vec());
        }
    }

    #[test]
    fn in_space_residual_of_full_operator() {
        // The full residual of a projected eigenpair lives in V_N^⊥.
        let basis = build_basis(&Lattice::line(10.0).unwrap(), 60.0, &[]).unwrap();
        let pot = random_potential_1d(&basis, 2, 8.0, 1.1, 100.0).unwrap();
        let model = ModelSpec::new(2, pot, Functional::Linear).unwrap();
        let e0 = PeriodicField::mode(basis.clone(), &[0, 0, 0]).unwrap();
        let rho = e0.scaled(Complex64::new(2.0 / 10.0f64.sqrt(), 0.0));
        let mask = basis.mask(20.0).unwrap();
        let slice = diagonalize_projected(&model, &rho, 0.0, &mask, 3, DEFAULT_GAP_TOL).unwrap();
        let vtot = TotalPotential::new(&model, &rho);
        for (phi, &eps) in slice.eigenvectors().iter().zip(slice.eigenvalues()) {
            let full = vtot
                .apply(0.0, phi)
                .sub(&phi.scaled(Complex64::new(eps, 0.0)));
            let in_space = full.restricted_to(&mask);
            assert!(in_space.norm_l2() < 1e-10, "in-space residual too large");
        }
    }
}
