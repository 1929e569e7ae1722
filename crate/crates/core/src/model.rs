//! The mean-field model: external potentials, densities, the periodic
//! Poisson (Hartree) solver, the energy `E(γ) = Tr(hγ) + F(ρ_γ)` and the
//! application of the mean-field Hamiltonian `H_ρ = -½Δ + V + V_ρ`.
//!
//! Potentials act by pointwise multiplication on the FFT grid; the grid is
//! sized so this is exact for every coefficient inside the basis sphere.

use std::sync::Arc;

use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pw_basis::{density_basis, PeriodicField, PlanewaveBasis, SphereMask};

/// Density below this is treated as zero before fractional powers; FFT
/// round-off can push tiny values negative.
const DENSITY_CLAMP: f64 = 1e-14;

/// How an external potential was generated; serialized into run configs and
/// reference artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialDescriptor {
    Zero,
    Random1d {
        seed: u64,
        amplitude: f64,
        decay: f64,
        mode_cutoff: f64,
    },
}

/// External potential `V`, a real-valued periodic field in Hartree units.
#[derive(Debug, Clone)]
pub struct ExternalPotential {
    field: PeriodicField,
    descriptor: PotentialDescriptor,
}

impl ExternalPotential {
    pub fn zero(basis: Arc<PlanewaveBasis>) -> Self {
        ExternalPotential {
            field: PeriodicField::zero(basis),
            descriptor: PotentialDescriptor::Zero,
        }
    }

    /// Wraps a field, enforcing the Hermitian symmetry of real potentials.
    pub fn from_field(field: PeriodicField, descriptor: PotentialDescriptor) -> Result<Self> {
        let defect = field.hermitian_symmetry_defect();
        if !(defect <= 1e-12) {
            return Err(Error::Model(format!(
                "external potential is not real-valued (symmetry defect {defect:.3e})"
            )));
        }
        Ok(ExternalPotential { field, descriptor })
    }

    pub fn field(&self) -> &PeriodicField {
        &self.field
    }

    pub fn descriptor(&self) -> &PotentialDescriptor {
        &self.descriptor
    }
}

/// The random 1D potential: `V̂_0 = 1`, `V̂_G = ω_G / |G|^decay` with
/// `ω_G ~ U(-amplitude, amplitude)` for `0 < |G| ≤ mode_cutoff`, and
/// `V̂_G = 1 / |G|^decay` beyond. Coefficients at `-G` mirror those at `G`,
/// so the field is real. One uniform draw is consumed per positive index in
/// ascending order, which keeps shared modes identical across basis sizes
/// for a fixed seed.
pub fn random_potential_1d(
    basis: &Arc<PlanewaveBasis>,
    seed: u64,
    amplitude: f64,
    decay: f64,
    mode_cutoff: f64,
) -> Result<ExternalPotential> {
    if basis.lattice().dim() != 1 {
        return Err(Error::Model(format!(
            "random 1D potential needs a 1D lattice, got dimension {}",
            basis.lattice().dim()
        )));
    }
    if basis.kshift() != &[0.0; 3] {
        return Err(Error::Model("potential basis must be unshifted".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coeffs = vec![Complex64::default(); basis.num_planewaves()];
    let i0 = basis
        .index_of(&[0, 0, 0])
        .ok_or_else(|| Error::Basis("basis lacks G = 0".into()))?;
    coeffs[i0] = Complex64::new(1.0, 0.0);

    let n_top = basis
        .gvectors()
        .iter()
        .map(|n| n[0])
        .max()
        .unwrap_or(0);
    for n in 1..=n_top {
        let omega: f64 = rng.gen_range(-amplitude..amplitude);
        let ip = match basis.index_of(&[n, 0, 0]) {
            Some(i) => i,
            None => continue,
        };
        let g = basis.g_cartesian(ip)[0].abs();
        let value = if g <= mode_cutoff {
            omega / g.powf(decay)
        } else {
            1.0 / g.powf(decay)
        };
        coeffs[ip] = Complex64::new(value, 0.0);
        if let Some(im) = basis.index_of(&[-n, 0, 0]) {
            coeffs[im] = Complex64::new(value, 0.0);
        }
    }

    let field = PeriodicField::new(basis.clone(), coeffs)?;
    ExternalPotential::from_field(
        field,
        PotentialDescriptor::Random1d {
            seed,
            amplitude,
            decay,
            mode_cutoff,
        },
    )
}

/// The density functional `F(ρ)` selecting the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Functional {
    /// `F = 0`: a linear eigenvalue problem.
    Linear,
    /// Reduced Hartree–Fock, `F(ρ) = ½ D(ρ, ρ)` (convex).
    Rhf,
    /// rHF plus the Xα exchange `E_xc = -C_α ∫ ρ^{4/3}` (nonconvex for
    /// `C_α > 0`).
    RhfXAlpha { c_alpha: f64 },
}

impl Functional {
    /// True iff the bound theory applies with full guarantees.
    pub fn convex(&self) -> bool {
        matches!(self, Functional::Linear | Functional::Rhf)
    }
}

/// The full problem statement: cell, electron count, external potential and
/// density functional. The potential's basis is the reference space all
/// computations live on.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    n_el: usize,
    external: ExternalPotential,
    functional: Functional,
}

impl ModelSpec {
    pub fn new(n_el: usize, external: ExternalPotential, functional: Functional) -> Result<Self> {
        if n_el == 0 {
            return Err(Error::Model("n_el must be positive".into()));
        }
        if let Functional::RhfXAlpha { c_alpha } = functional {
            if !(c_alpha >= 0.0) {
                return Err(Error::Model(format!("c_alpha must be ≥ 0, got {c_alpha}")));
            }
        }
        Ok(ModelSpec {
            n_el,
            external,
            functional,
        })
    }

    pub fn n_el(&self) -> usize {
        self.n_el
    }

    pub fn external(&self) -> &ExternalPotential {
        &self.external
    }

    pub fn functional(&self) -> Functional {
        self.functional
    }

    pub fn convex(&self) -> bool {
        self.functional.convex()
    }

    /// The reference basis (Γ sphere) the model lives on.
    pub fn basis(&self) -> &Arc<PlanewaveBasis> {
        self.external.field().basis()
    }
}

/// `N_el` orthonormal orbitals with their eigenvalues: the computable face
/// of a density matrix `γ = Σ |φ_i⟩⟨φ_i|`. Orbitals are stored on the
/// reference basis but supported inside the declared computational mask.
#[derive(Debug, Clone)]
pub struct OrbitalSet {
    mask: SphereMask,
    orbitals: Vec<PeriodicField>,
    eigenvalues: Vec<f64>,
}

impl OrbitalSet {
    pub fn new(
        mask: SphereMask,
        orbitals: Vec<PeriodicField>,
        eigenvalues: Vec<f64>,
    ) -> Result<Self> {
        if orbitals.len() != eigenvalues.len() {
            return Err(Error::Model("orbital/eigenvalue count mismatch".into()));
        }
        if eigenvalues.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Model("eigenvalues must be ascending".into()));
        }
        for orb in &orbitals {
            if orb.basis().num_planewaves() != mask.parent_len() {
                return Err(Error::Model("orbital basis does not match mask parent".into()));
            }
            for (i, c) in orb.coeffs().iter().enumerate() {
                if !mask.contains(i) && c.norm() > 1e-12 {
                    return Err(Error::Model(
                        "orbital has support outside its declared mask".into(),
                    ));
                }
            }
        }
        let set = OrbitalSet {
            mask,
            orbitals,
            eigenvalues,
        };
        let defect = set.orthonormality_defect();
        if defect > 1e-10 {
            return Err(Error::NotOrthonormal(defect));
        }
        Ok(set)
    }

    pub fn mask(&self) -> &SphereMask {
        &self.mask
    }

    pub fn orbitals(&self) -> &[PeriodicField] {
        &self.orbitals
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn len(&self) -> usize {
        self.orbitals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orbitals.is_empty()
    }

    pub fn basis(&self) -> &Arc<PlanewaveBasis> {
        self.orbitals[0].basis()
    }

    /// Max deviation of the Gram matrix from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.orbitals.len() {
            for j in i..self.orbitals.len() {
                let g = self.orbitals[i].inner(&self.orbitals[j]);
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g - target).norm());
            }
        }
        worst
    }
}

/// Grid values of `ρ = Σ_i |φ_i|²` (real part; exact on an alias-free grid).
pub fn density_grid_values(orbs: &OrbitalSet) -> Result<Vec<f64>> {
    let defect = orbs.orthonormality_defect();
    if defect > 1e-10 {
        return Err(Error::NotOrthonormal(defect));
    }
    let n = orbs.basis().grid_len();
    let mut rho = vec![0.0; n];
    for orb in orbs.orbitals() {
        for (r, v) in rho.iter_mut().zip(orb.real_values()) {
            *r += v.norm_sqr();
        }
    }
    Ok(rho)
}

/// The density `ρ_γ = Σ_i |φ_i|²` as a field on the density carrier of the
/// orbitals' basis (a `4·E_cut` sphere at k = 0 holding every product of two
/// basis functions exactly, see [`density_basis`]).
pub fn density(orbs: &OrbitalSet) -> Result<PeriodicField> {
    let rho = density_grid_values(orbs)?;
    let values: Vec<Complex64> = rho.iter().map(|&r| Complex64::new(r, 0.0)).collect();
    let carrier = density_basis(orbs.basis());
    let field = PeriodicField::from_grid(carrier, &values)?;
    debug_assert!(
        (integral(&field) - orbs.len() as f64).abs() < 1e-10 * orbs.len() as f64 + 1e-10,
        "density does not integrate to N_el"
    );
    Ok(field)
}

/// Constant density integrating to `n_el`, on the carrier of `reference`.
pub fn constant_density(reference: &Arc<PlanewaveBasis>, n_el: usize) -> PeriodicField {
    let carrier = density_basis(reference);
    let i0 = carrier.index_of(&[0, 0, 0]).expect("carrier holds G = 0");
    let mut coeffs = vec![Complex64::default(); carrier.num_planewaves()];
    coeffs[i0] = Complex64::new(n_el as f64 / carrier.lattice().volume().sqrt(), 0.0);
    PeriodicField::new(carrier, coeffs).expect("sized to carrier")
}

/// `∫_Ω f` from the `G = 0` coefficient.
pub fn integral(f: &PeriodicField) -> f64 {
    match f.basis().index_of(&[0, 0, 0]) {
        Some(i0) => f.coeffs()[i0].re * f.basis().lattice().volume().sqrt(),
        None => 0.0,
    }
}

/// Mean value `⟨f⟩ = (1/|Ω|) ∫_Ω f`.
pub fn mean_value(f: &PeriodicField) -> f64 {
    integral(f) / f.basis().lattice().volume()
}

/// Hartree potential: the unique zero-mean solution of
/// `-Δ V_H = 4π (ρ - ⟨ρ⟩)`, i.e. `V̂_{H,G} = 4π ρ̂_G / |G|²` for `G ≠ 0`.
pub fn hartree_potential(rho: &PeriodicField) -> PeriodicField {
    let basis = rho.basis();
    let coeffs = rho
        .coeffs()
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let g = basis.g_cartesian(i);
            let g2 = g[0] * g[0] + g[1] * g[1] + g[2] * g[2];
            if g2 == 0.0 {
                Complex64::default()
            } else {
                c * (4.0 * std::f64::consts::PI / g2)
            }
        })
        .collect();
    PeriodicField::new(basis.clone(), coeffs).expect("same basis")
}

/// Coulomb interaction energy per unit cell,
/// `D(ρ₁, ρ₂) = Σ_{G≠0} 4π conj(ρ̂₁)_G (ρ̂₂)_G / |G|²`.
pub fn coulomb_energy(rho1: &PeriodicField, rho2: &PeriodicField) -> f64 {
    let basis = rho1.basis();
    assert!(basis.same_sphere(rho2.basis()), "densities on different bases");
    let mut acc = Complex64::default();
    for (i, (a, b)) in rho1.coeffs().iter().zip(rho2.coeffs()).enumerate() {
        let g = basis.g_cartesian(i);
        let g2 = g[0] * g[0] + g[1] * g[1] + g[2] * g[2];
        if g2 > 0.0 {
            acc += a.conj() * b * (4.0 * std::f64::consts::PI / g2);
        }
    }
    acc.re
}

/// The nonlinear term `F(ρ)` of the energy.
pub fn functional_energy(model: &ModelSpec, rho: &PeriodicField) -> f64 {
    match model.functional() {
        Functional::Linear => 0.0,
        Functional::Rhf => 0.5 * coulomb_energy(rho, rho),
        Functional::RhfXAlpha { c_alpha } => {
            let w = rho.basis().quadrature_weight();
            let xc: f64 = rho
                .real_values()
                .iter()
                .map(|v| clamped(v.re).powf(4.0 / 3.0))
                .sum();
            0.5 * coulomb_energy(rho, rho) - c_alpha * w * xc
        }
    }
}

fn clamped(rho: f64) -> f64 {
    if rho < DENSITY_CLAMP {
        0.0
    } else {
        rho
    }
}

/// Total effective potential `V + V_ρ` prepared for grid application: real
/// values, their full-grid Fourier transform, and the scalars the bound
/// machinery needs. The sup norms are grid evaluations; they understate the
/// true sup by at most the basis truncation error.
#[derive(Debug, Clone)]
pub struct TotalPotential {
    basis: Arc<PlanewaveBasis>,
    grid_values: Vec<f64>,
    grid_fourier: Vec<Complex64>,
    mean: f64,
    sup_norm: f64,
    fluct_sup_norm: f64,
}

impl TotalPotential {
    /// Assembles `V + V_ρ` for the given density. The density must be a
    /// periodic (unshifted) field sharing the reference grid.
    pub fn new(model: &ModelSpec, rho: &PeriodicField) -> TotalPotential {
        let basis = model.basis().clone();
        assert_eq!(
            basis.grid_shape(),
            rho.basis().grid_shape(),
            "density grid does not match model grid"
        );
        assert_eq!(rho.basis().kshift(), &[0.0; 3], "density must be unshifted");
        let n = basis.grid_len();
        let mut values = vec![0.0; n];
        for (v, e) in values.iter_mut().zip(model.external().field().real_values()) {
            *v += e.re;
        }
        match model.functional() {
            Functional::Linear => {}
            Functional::Rhf => {
                let vh = hartree_potential(rho);
                for (v, h) in values.iter_mut().zip(vh.real_values()) {
                    *v += h.re;
                }
            }
            Functional::RhfXAlpha { c_alpha } => {
                let vh = hartree_potential(rho);
                for (v, h) in values.iter_mut().zip(vh.real_values()) {
                    *v += h.re;
                }
                for (v, r) in values.iter_mut().zip(rho.real_values()) {
                    *v -= c_alpha * (4.0 / 3.0) * clamped(r.re).powf(1.0 / 3.0);
                }
            }
        }
        let complex: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let grid_fourier = basis.fourier_on_grid(&complex);
        let mean = values.iter().sum::<f64>() / n as f64;
        let sup_norm = values.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        let fluct_sup_norm = values.iter().fold(0.0f64, |m, &v| m.max((v - mean).abs()));
        TotalPotential {
            basis,
            grid_values: values,
            grid_fourier,
            mean,
            sup_norm,
            fluct_sup_norm,
        }
    }

    pub fn basis(&self) -> &Arc<PlanewaveBasis> {
        &self.basis
    }

    pub fn grid_values(&self) -> &[f64] {
        &self.grid_values
    }

    /// Fourier coefficient of the grid potential at integer frequency `n`
    /// (any grid frequency, `e_G` normalization).
    pub fn fourier_at(&self, n: &[i64; 3]) -> Complex64 {
        self.grid_fourier[self.basis.grid_index(n)]
    }

    /// `⟨V_tot⟩`, the mean over the cell.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// `‖V_tot‖_∞` evaluated on the grid.
    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    /// `‖V_tot − ⟨V_tot⟩‖_∞` evaluated on the grid.
    pub fn fluct_sup_norm(&self) -> f64 {
        self.fluct_sup_norm
    }

    /// Pointwise multiplication `V_tot · φ`, truncated back to the field's
    /// sphere (exact there thanks to the alias-free grid).
    pub fn multiply(&self, phi: &PeriodicField) -> PeriodicField {
        let basis = phi.basis();
        assert_eq!(
            basis.grid_shape(),
            self.basis.grid_shape(),
            "field grid does not match potential grid"
        );
        let values: Vec<Complex64> = phi
            .real_values()
            .iter()
            .zip(&self.grid_values)
            .map(|(p, &v)| p * v)
            .collect();
        PeriodicField::from_grid(basis.clone(), &values).expect("grid sizes agree")
    }

    /// Applies `(-½Δ + V_tot + shift)` to a field whose basis shares this
    /// grid. Kinetic term in Fourier space (respecting the field's k-shift),
    /// potential by pointwise grid multiplication.
    pub fn apply(&self, shift: f64, phi: &PeriodicField) -> PeriodicField {
        let basis = phi.basis();
        let vpart = self.multiply(phi);
        let coeffs: Vec<Complex64> = phi
            .coeffs()
            .iter()
            .zip(basis.kinetic_energies())
            .zip(vpart.coeffs())
            .map(|((c, &kin), v)| c * (kin + shift) + v)
            .collect();
        PeriodicField::new(basis.clone(), coeffs).expect("same basis")
    }
}

/// Mean-field potential term `V_ρ = F'(ρ)` as grid values (for tests and
/// derivative checks).
pub fn mean_field_potential_values(model: &ModelSpec, rho: &PeriodicField) -> Vec<f64> {
    let n = rho.basis().grid_len();
    let mut values = vec![0.0; n];
    match model.functional() {
        Functional::Linear => {}
        Functional::Rhf => {
            let vh = hartree_potential(rho);
            for (v, h) in values.iter_mut().zip(vh.real_values()) {
                *v = h.re;
            }
        }
        Functional::RhfXAlpha { c_alpha } => {
            let vh = hartree_potential(rho);
            for ((v, h), r) in values.iter_mut().zip(vh.real_values()).zip(rho.real_values()) {
                *v = h.re - c_alpha * (4.0 / 3.0) * clamped(r.re).powf(1.0 / 3.0);
            }
        }
    }
    values
}

/// `(-½Δ + V + V_ρ + shift) φ`.
pub fn apply_hamiltonian(
    model: &ModelSpec,
    rho: &PeriodicField,
    shift: f64,
    phi: &PeriodicField,
) -> PeriodicField {
    TotalPotential::new(model, rho).apply(shift, phi)
}

/// `∫_Ω V_ext ρ` by grid quadrature (exact for band-limited factors).
pub fn external_pairing(model: &ModelSpec, rho: &PeriodicField) -> f64 {
    let w = rho.basis().quadrature_weight();
    model
        .external()
        .field()
        .real_values()
        .iter()
        .zip(rho.real_values())
        .map(|(v, r)| v.re * r.re)
        .sum::<f64>()
        * w
}

/// `Σ_i Σ_G ½|G + k|² |φ̂_{i,G}|²`.
pub fn kinetic_energy(orbs: &OrbitalSet) -> f64 {
    orbs.orbitals()
        .iter()
        .map(|orb| {
            orb.coeffs()
                .iter()
                .zip(orb.basis().kinetic_energies())
                .map(|(c, &kin)| kin * c.norm_sqr())
                .sum::<f64>()
        })
        .sum()
}

/// Total energy `E(γ) = Tr(hγ) + F(ρ_γ)` of an orbital set.
pub fn total_energy(model: &ModelSpec, orbs: &OrbitalSet) -> Result<f64> {
    let rho = density(orbs)?;
    Ok(kinetic_energy(orbs) + external_pairing(model, &rho) + functional_energy(model, &rho))
}
