//! Brillouin-zone machinery: uniform k-point grids, Bloch-fiber bases
//! sharing one FFT grid, densities and energies per unit cell, and the
//! fiber-wise aggregation of the error components.
//!
//! Each fiber `k` carries the cell-periodic parts of the Bloch orbitals on
//! its own shifted sphere `½|G+k|² ≤ E_cut`; the kinetic term sees the
//! shift, the potentials act on the common grid.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::BoundVariant;
use crate::model::{ExternalPotential, ModelSpec, OrbitalSet, PotentialDescriptor};
use crate::pw_basis::{build_basis, build_basis_sized, Lattice, PeriodicField, PlanewaveBasis};
use crate::scf::{average_density, FiberSetup, IterateBounds};

/// A uniform k-point grid with equal weights `1/N_k`, fractional
/// coordinates folded into `(-1/2, 1/2]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KGrid {
    sizes: Vec<usize>,
    kfrac: Vec<Vec<f64>>,
}

impl KGrid {
    pub fn new(lattice: &Lattice, sizes: &[usize]) -> Result<KGrid> {
        if sizes.len() != lattice.dim() {
            return Err(Error::Config(format!(
                "k-grid has {} sizes for a {}-dimensional lattice",
                sizes.len(),
                lattice.dim()
            )));
        }
        if sizes.iter().any(|&n| n == 0) {
            return Err(Error::Config("k-grid sizes must be positive".into()));
        }
        let mut kfrac = vec![Vec::new()];
        for &n in sizes {
            let mut extended = Vec::new();
            for base in &kfrac {
                for j in 0..n {
                    let mut f = j as f64 / n as f64;
                    if f > 0.5 {
                        f -= 1.0;
                    }
                    let mut point = base.clone();
                    point.push(f);
                    extended.push(point);
                }
            }
            kfrac = extended;
        }
        Ok(KGrid {
            sizes: sizes.to_vec(),
            kfrac,
        })
    }

    /// Γ-only grid.
    pub fn gamma(lattice: &Lattice) -> KGrid {
        KGrid::new(lattice, &vec![1; lattice.dim()]).expect("valid sizes")
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn len(&self) -> usize {
        self.kfrac.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kfrac.is_empty()
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.len() as f64
    }

    pub fn fractional(&self) -> &[Vec<f64>] {
        &self.kfrac
    }

    pub fn cartesian(&self, lattice: &Lattice) -> Vec<[f64; 3]> {
        self.kfrac
            .iter()
            .map(|f| lattice.k_cartesian(f))
            .collect()
    }
}

/// Builds the Γ reference basis and one reference basis per k-point, all on
/// one common FFT grid (the per-dimension maximum of the fibers'
/// alias-free minima).
pub fn reference_bases(
    lattice: &Lattice,
    ecut_ref: f64,
    kgrid: &KGrid,
) -> Result<(Arc<PlanewaveBasis>, Vec<Arc<PlanewaveBasis>>)> {
    let kcart = kgrid.cartesian(lattice);
    let mut shape = build_basis(lattice, ecut_ref, &[])?.grid_shape();
    let mut fiber_shapes = Vec::with_capacity(kcart.len());
    for k in &kcart {
        let s = build_basis(lattice, ecut_ref, &k[..lattice.dim()])?.grid_shape();
        fiber_shapes.push(s);
        for j in 0..3 {
            shape[j] = shape[j].max(s[j]);
        }
    }
    let gamma = build_basis_sized(lattice, ecut_ref, &[], Some(shape))?;
    let mut fibers = Vec::with_capacity(kcart.len());
    for k in &kcart {
        if k.iter().all(|&c| c == 0.0) {
            fibers.push(gamma.clone());
        } else {
            fibers.push(build_basis_sized(
                lattice,
                ecut_ref,
                &k[..lattice.dim()],
                Some(shape),
            )?);
        }
    }
    Ok((gamma, fibers))
}

/// Masks every fiber at the computational cutoff, producing the SCF setup.
pub fn fiber_setup(fibers: &[Arc<PlanewaveBasis>], ecut: f64) -> Result<FiberSetup> {
    let mut masks = Vec::with_capacity(fibers.len());
    for basis in fibers {
        masks.push(basis.mask(ecut)?);
    }
    Ok(FiberSetup {
        bases: fibers.to_vec(),
        masks,
    })
}

/// A Bloch state: one orbital set per fiber plus the shared density per
/// unit cell.
pub struct BlochState {
    pub orbitals: Vec<OrbitalSet>,
    pub density: PeriodicField,
}

impl BlochState {
    pub fn new(orbitals: Vec<OrbitalSet>) -> Result<BlochState> {
        let weight = 1.0 / orbitals.len() as f64;
        let density = average_density(&orbitals, weight)?;
        Ok(BlochState { orbitals, density })
    }
}

/// `ρ(x) = (1/N_k) Σ_k Σ_i |φ_{i,k}(x)|²` on the density carrier.
pub fn bz_density(orbitals: &[OrbitalSet]) -> Result<PeriodicField> {
    let weight = 1.0 / orbitals.len() as f64;
    average_density(orbitals, weight)
}

/// Applies the Bloch fiber `h_k + V_ρ + shift` to a cell-periodic part; the
/// fiber is selected by the field's basis shift (kinetic `½|G+k|²`).
pub fn fiber_hamiltonian_apply(
    model: &ModelSpec,
    rho: &PeriodicField,
    shift: f64,
    phi: &PeriodicField,
) -> PeriodicField {
    crate::model::apply_hamiltonian(model, rho, shift, phi)
}

/// Per-unit-cell error components of one variant from an aggregated
/// iterate report: `(err_disc, err_scf)`, absent when any fiber refused the
/// variant.
pub fn bz_error_components(bounds: &IterateBounds, variant: BoundVariant) -> Option<(f64, f64)> {
    bounds
        .reports
        .iter()
        .find(|r| r.variant == variant)
        .and_then(|r| r.err_disc.map(|d| (d, r.err_scf)))
}

/// Embeds a cell-periodic potential into an `l`-fold supercell (every
/// lattice vector scaled by `l`): unit-cell mode `G` lands on supercell
/// index `l·n` with coefficients scaled by `√(l^d)` to account for the
/// normalization volume.
pub fn supercell_potential(
    unit: &ExternalPotential,
    l: usize,
    kind: PotentialDescriptor,
) -> Result<(Arc<PlanewaveBasis>, ExternalPotential)> {
    if l == 0 {
        return Err(Error::Config("supercell factor must be positive".into()));
    }
    let unit_basis = unit.field().basis();
    let lattice = unit_basis.lattice();
    let dim = lattice.dim();
    let vectors: Vec<Vec<f64>> = (0..dim)
        .map(|j| {
            (0..dim)
                .map(|i| lattice.cell_vectors()[j][i] * l as f64)
                .collect()
        })
        .collect();
    let super_lattice = Lattice::new(&vectors)?;
    let super_basis = build_basis(&super_lattice, unit_basis.ecut(), &[])?;
    let scale = (l as f64).powi(dim as i32).sqrt();
    let mut coeffs = vec![Complex64::default(); super_basis.num_planewaves()];
    for (i, n) in unit_basis.gvectors().iter().enumerate() {
        let folded = [n[0] * l as i64, n[1] * l as i64, n[2] * l as i64];
        if let Some(j) = super_basis.index_of(&folded) {
            coeffs[j] = unit.field().coeffs()[i] * scale;
        }
    }
    let field = PeriodicField::new(super_basis.clone(), coeffs)?;
    let pot = ExternalPotential::from_field(field, kind)?;
    Ok((super_basis, pot))
}
