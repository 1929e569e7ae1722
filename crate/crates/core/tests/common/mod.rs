//! Shared test oracles, independent of the library's solver paths.

#![allow(dead_code)]

use std::sync::Arc;

use num_complex::Complex64;
use pwcert::pw_basis::{PeriodicField, PlanewaveBasis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Eigenvalues of a complex Hermitian matrix by cyclic Jacobi sweeps on the
/// doubled real-symmetric embedding `[[Re A, -Im A], [Im A, Re A]]` (each
/// eigenvalue of `A` appears twice).
pub fn jacobi_hermitian_eigenvalues(a: &[Vec<Complex64>]) -> Vec<f64> {
    let n = a.len();
    let m = 2 * n;
    let mut mat = vec![vec![0.0f64; m]; m];
    for i in 0..n {
        for j in 0..n {
            mat[i][j] = a[i][j].re;
            mat[i][j + n] = -a[i][j].im;
            mat[i + n][j] = a[i][j].im;
            mat[i + n][j + n] = a[i][j].re;
        }
    }
    jacobi_symmetric_eigenvalues(&mut mat)
        .chunks(2)
        .map(|pair| 0.5 * (pair[0] + pair[1]))
        .collect()
}

/// Classic cyclic Jacobi for real symmetric matrices; returns ascending
/// eigenvalues.
pub fn jacobi_symmetric_eigenvalues(a: &mut [Vec<f64>]) -> Vec<f64> {
    let n = a.len();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p][q] * a[p][q];
            }
        }
        if off.sqrt() < 1e-14 * (1.0 + frobenius(a)) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p][q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    eigs.sort_by(f64::total_cmp);
    eigs
}

fn frobenius(a: &[Vec<f64>]) -> f64 {
    a.iter()
        .flat_map(|row| row.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Dense operator matrix assembled directly from Fourier coefficients:
/// kinetic diagonal plus convolution with the given potential fields, all
/// in coefficient space (no FFT involved).
pub fn convolution_assembly(
    basis: &Arc<PlanewaveBasis>,
    indices: &[usize],
    potentials: &[&PeriodicField],
    shift: f64,
) -> Vec<Vec<Complex64>> {
    let scale = 1.0 / basis.lattice().volume().sqrt();
    let m = indices.len();
    let mut mat = vec![vec![Complex64::default(); m]; m];
    for (col, &j) in indices.iter().enumerate() {
        for (row, &i) in indices.iter().enumerate() {
            let d = [
                basis.gvectors()[i][0] - basis.gvectors()[j][0],
                basis.gvectors()[i][1] - basis.gvectors()[j][1],
                basis.gvectors()[i][2] - basis.gvectors()[j][2],
            ];
            let mut entry = Complex64::default();
            for pot in potentials {
                if let Some(k) = pot.basis().index_of(&d) {
                    entry += pot.coeffs()[k] * scale;
                }
            }
            if i == j {
                entry += Complex64::new(basis.kinetic_energies()[i] + shift, 0.0);
            }
            mat[row][col] = entry;
        }
    }
    mat
}

pub fn random_field(basis: &Arc<PlanewaveBasis>, seed: u64) -> PeriodicField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs = (0..basis.num_planewaves())
        .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    PeriodicField::new(basis.clone(), coeffs).unwrap()
}

#[cfg(test)]
mod self_checks {
    use super::*;

    #[test]
    fn jacobi_reproduces_known_spectrum() {
        // 2x2 Hermitian with known eigenvalues 1 ± |z| for diag 1, offdiag z.
        let z = Complex64::new(0.6, 0.8); // |z| = 1
        let a = vec![
            vec![Complex64::new(1.0, 0.0), z],
            vec![z.conj(), Complex64::new(1.0, 0.0)],
        ];
        let eigs = jacobi_hermitian_eigenvalues(&a);
        assert!((eigs[0] - 0.0).abs() < 1e-12);
        assert!((eigs[1] - 2.0).abs() < 1e-12);
    }
}
