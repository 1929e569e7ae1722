//! The residual-based bound ladder for the energy error at an SCF iterate.
//!
//! For the shifted operator `A = H_ρ + s > 0` with occupied eigenpairs
//! `(ε_i, φ_i)` of `Π_N A Π_N`, the cluster estimate reads
//!
//! ```text
//! η² = Σ_i ⟨r_i, A⁻¹ r_i⟩ + 4 ε_last c_N² Σ_i ‖A⁻¹ r_i‖²,
//! c_N = (1 − ε_last / ε_next)⁻¹,   r_i = ε_i φ_i − A φ_i ∈ V_N^⊥,
//! ```
//!
//! and dominates the cluster eigenvalue error `Σ_i (ε_{i,N} − ε_i) ≥ 0`.
//! Replacing `A⁻¹` by Neumann truncations of the block splitting
//! `A = H₀ + W` gives the cheap variants `η₀` (diagonal solve in `V_N^⊥`)
//! and `η₁` (one extra `W` application); adding remainder estimates under
//! `‖H₀⁻¹W‖ ≤ q < 1` restores a mathematical guarantee. The resulting
//! lower bound `μ` on the mean occupied eigenvalue splits the certified
//! energy error into a discretization part and an SCF part.

use std::sync::{Arc, OnceLock};
use std::time::Instant;

use ndarray::{Array1, Array2, OwnedRepr};
use ndarray_linalg::cholesky::{CholeskyFactorized, FactorizeCInto, SolveC};
use ndarray_linalg::{Eigh, UPLO};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linear_solver::{diagonalize_with_potential, SpectralSlice};
use crate::model::{OrbitalSet, TotalPotential};
use crate::pw_basis::{PeriodicField, PlanewaveBasis, SphereMask};

/// Dense factorization of the reference-space operator is used up to this
/// many planewaves; beyond it, `A x = r` is solved by preconditioned CG.
const DENSE_SOLVE_LIMIT: usize = 4096;

/// Relative tolerance of the iterative `A x = r` solve.
const CG_TOL: f64 = 1e-12;

/// Number of Neumann terms kept when approximating `A⁻¹`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeumannOrder {
    Zeroth,
    First,
}

impl NeumannOrder {
    pub fn level(self) -> usize {
        match self {
            NeumannOrder::Zeroth => 0,
            NeumannOrder::First => 1,
        }
    }
}

/// The seven estimator variants reported by the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundVariant {
    EtaFull,
    Eta0,
    Eta1,
    Eta0G,
    Eta1G,
    Eta0GOpt,
    Eta1GOpt,
}

impl BoundVariant {
    pub fn all() -> [BoundVariant; 7] {
        [
            BoundVariant::EtaFull,
            BoundVariant::Eta0,
            BoundVariant::Eta1,
            BoundVariant::Eta0G,
            BoundVariant::Eta1G,
            BoundVariant::Eta0GOpt,
            BoundVariant::Eta1GOpt,
        ]
    }

    pub fn label(self) -> &'static str {
        match self {
            BoundVariant::EtaFull => "eta_full",
            BoundVariant::Eta0 => "eta0",
            BoundVariant::Eta1 => "eta1",
            BoundVariant::Eta0G => "eta0_g",
            BoundVariant::Eta1G => "eta1_g",
            BoundVariant::Eta0GOpt => "eta0_g_opt",
            BoundVariant::Eta1GOpt => "eta1_g_opt",
        }
    }

    pub fn from_label(s: &str) -> Option<BoundVariant> {
        BoundVariant::all().into_iter().find(|v| v.label() == s)
    }

    /// Variants whose value dominates `η²` mathematically (for convex
    /// models and, where applicable, `‖H₀⁻¹W‖ < 1`).
    pub fn guaranteed_family(self) -> bool {
        !matches!(self, BoundVariant::Eta0 | BoundVariant::Eta1)
    }

    pub fn neumann_order(self) -> Option<NeumannOrder> {
        match self {
            BoundVariant::EtaFull => None,
            BoundVariant::Eta0 | BoundVariant::Eta0G | BoundVariant::Eta0GOpt => {
                Some(NeumannOrder::Zeroth)
            }
            BoundVariant::Eta1 | BoundVariant::Eta1G | BoundVariant::Eta1GOpt => {
                Some(NeumannOrder::First)
            }
        }
    }

    pub fn shift_optimized(self) -> bool {
        matches!(self, BoundVariant::Eta0GOpt | BoundVariant::Eta1GOpt)
    }

    /// True for the variants that add Neumann remainder corrections (and
    /// therefore require the operator-norm bound to be below one).
    pub fn needs_opnorm(self) -> bool {
        matches!(
            self,
            BoundVariant::Eta0G
                | BoundVariant::Eta1G
                | BoundVariant::Eta0GOpt
                | BoundVariant::Eta1GOpt
        )
    }
}

/// The shifted operator `A = H_ρ + s` split as `A = H₀ + W` relative to a
/// coarse mask: `H₀` keeps the dense block `Π_N A Π_N` and the Fourier
/// diagonal `Π_N^⊥(-½Δ + ⟨V⟩ + s)Π_N^⊥`; `W` holds the off-diagonal
/// potential blocks and the perp fluctuation `Π_N^⊥(V − ⟨V⟩)Π_N^⊥`.
pub struct SplitOperator {
    basis: Arc<PlanewaveBasis>,
    mask: SphereMask,
    vtot: Arc<TotalPotential>,
    shift: f64,
    a_coarse_unshifted: Arc<Array2<Complex64>>,
    coarse_chol: CholeskyFactorized<OwnedRepr<Complex64>>,
    perp_indices: Vec<usize>,
    perp_diag: Vec<f64>,
    full_chol: OnceLock<Option<CholeskyFactorized<OwnedRepr<Complex64>>>>,
}

impl SplitOperator {
    pub fn new(
        vtot: Arc<TotalPotential>,
        basis: &Arc<PlanewaveBasis>,
        mask: &SphereMask,
        shift: f64,
    ) -> Result<Self> {
        let a_coarse = crate::linear_solver::assemble_projected(&vtot, basis, mask, 0.0);
        Self::from_parts(vtot, basis.clone(), mask.clone(), Arc::new(a_coarse), shift)
    }

    /// Same operator at a different shift; reuses the assembled coarse block.
    pub fn with_shift(&self, shift: f64) -> Result<Self> {
        Self::from_parts(
            self.vtot.clone(),
            self.basis.clone(),
            self.mask.clone(),
            self.a_coarse_unshifted.clone(),
            shift,
        )
    }

    fn from_parts(
        vtot: Arc<TotalPotential>,
        basis: Arc<PlanewaveBasis>,
        mask: SphereMask,
        a_coarse_unshifted: Arc<Array2<Complex64>>,
        shift: f64,
    ) -> Result<Self> {
        let mut shifted = (*a_coarse_unshifted).clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += Complex64::new(shift, 0.0);
        }
        let coarse_chol = shifted.factorizec_into(UPLO::Lower).map_err(|_| {
            Error::NotPositiveDefinite(format!("A_N at shift {shift:.6e}"))
        })?;

        let mean = vtot.mean();
        let mut perp_indices = Vec::new();
        let mut perp_diag = Vec::new();
        for (i, &kin) in basis.kinetic_energies().iter().enumerate() {
            if !mask.contains(i) {
                let d = kin + mean + shift;
                if d <= 0.0 {
                    return Err(Error::NotPositiveDefinite(format!(
                        "H0 perp diagonal entry {d:.6e} at shift {shift:.6e}"
                    )));
                }
                perp_indices.push(i);
                perp_diag.push(d);
            }
        }

        Ok(SplitOperator {
            basis,
            mask,
            vtot,
            shift,
            a_coarse_unshifted,
            coarse_chol,
            perp_indices,
            perp_diag,
            full_chol: OnceLock::new(),
        })
    }

    pub fn basis(&self) -> &Arc<PlanewaveBasis> {
        &self.basis
    }

    pub fn mask(&self) -> &SphereMask {
        &self.mask
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn vtot(&self) -> &Arc<TotalPotential> {
        &self.vtot
    }

    /// `A f = (-½Δ + V_tot + s) f` in the reference basis.
    pub fn apply_a(&self, f: &PeriodicField) -> PeriodicField {
        self.vtot.apply(self.shift, f)
    }

    /// `H₀ f`: dense coarse block on the masked part, Fourier diagonal on
    /// the perp part.
    pub fn apply_h0(&self, f: &PeriodicField) -> PeriodicField {
        let m = self.mask.len();
        let mut xn = Array1::<Complex64>::zeros(m);
        for (row, &i) in self.mask.indices().iter().enumerate() {
            xn[row] = f.coeffs()[i];
        }
        let mut coarse = self.a_coarse_unshifted.dot(&xn);
        for row in 0..m {
            coarse[row] += xn[row] * self.shift;
        }
        let mut coeffs = vec![Complex64::default(); f.coeffs().len()];
        for (row, &i) in self.mask.indices().iter().enumerate() {
            coeffs[i] = coarse[row];
        }
        for (p, &i) in self.perp_indices.iter().enumerate() {
            coeffs[i] = f.coeffs()[i] * self.perp_diag[p];
        }
        PeriodicField::new(self.basis.clone(), coeffs).expect("same basis")
    }

    /// `H₀⁻¹ f`: dense solve in `V_N`, diagonal division in `V_N^⊥`.
    pub fn apply_h0_inverse(&self, f: &PeriodicField) -> PeriodicField {
        let m = self.mask.len();
        let mut xn = Array1::<Complex64>::zeros(m);
        for (row, &i) in self.mask.indices().iter().enumerate() {
            xn[row] = f.coeffs()[i];
        }
        let solved = self.coarse_chol.solvec(&xn).expect("factorized solve");
        let mut coeffs = vec![Complex64::default(); f.coeffs().len()];
        for (row, &i) in self.mask.indices().iter().enumerate() {
            coeffs[i] = solved[row];
        }
        for (p, &i) in self.perp_indices.iter().enumerate() {
            coeffs[i] = f.coeffs()[i] / self.perp_diag[p];
        }
        PeriodicField::new(self.basis.clone(), coeffs).expect("same basis")
    }

    /// `W f = V f − Π_N (V Π_N f) − ⟨V⟩ Π_N^⊥ f`: the potential acting
    /// through the off-diagonal blocks plus the perp fluctuation. Kinetic
    /// part and shift cancel blockwise.
    pub fn apply_w(&self, f: &PeriodicField) -> PeriodicField {
        let vf = self.vtot.multiply(f);
        let coarse_part = f.restricted_to(&self.mask);
        let v_coarse = self.vtot.multiply(&coarse_part);
        let mean = self.vtot.mean();
        let mut coeffs = Vec::with_capacity(f.coeffs().len());
        for i in 0..f.coeffs().len() {
            let c = if self.mask.contains(i) {
                vf.coeffs()[i] - v_coarse.coeffs()[i]
            } else {
                vf.coeffs()[i] - f.coeffs()[i] * mean
            };
            coeffs.push(c);
        }
        PeriodicField::new(self.basis.clone(), coeffs).expect("same basis")
    }

    fn full_cholesky(&self) -> Result<&CholeskyFactorized<OwnedRepr<Complex64>>> {
        let slot = self.full_chol.get_or_init(|| {
            let full_mask = self.basis.full_mask();
            let mat = crate::linear_solver::assemble_projected(
                &self.vtot,
                &self.basis,
                &full_mask,
                self.shift,
            );
            mat.factorizec_into(UPLO::Lower).ok()
        });
        slot.as_ref().ok_or_else(|| {
            Error::NotPositiveDefinite(format!(
                "reference-space A at shift {:.6e}",
                self.shift
            ))
        })
    }

    /// Solves `A x = rhs` in the reference basis: dense Cholesky for
    /// desk-scale bases, `H₀`-preconditioned CG beyond [`DENSE_SOLVE_LIMIT`].
    pub fn solve_full(&self, rhs: &PeriodicField) -> Result<PeriodicField> {
        if self.basis.num_planewaves() <= DENSE_SOLVE_LIMIT {
            self.solve_full_dense(rhs)
        } else {
            self.solve_full_cg(rhs)
        }
    }

    pub fn solve_full_dense(&self, rhs: &PeriodicField) -> Result<PeriodicField> {
        let chol = self.full_cholesky()?;
        let b = Array1::from(rhs.coeffs().to_vec());
        let x = chol
            .solvec(&b)
            .map_err(|e| Error::EstimatorUnavailable(format!("dense solve failed: {e}")))?;
        PeriodicField::new(self.basis.clone(), x.to_vec())
    }

    /// Conjugate gradients on `A x = rhs` with the `H₀⁻¹` preconditioner.
    pub fn solve_full_cg(&self, rhs: &PeriodicField) -> Result<PeriodicField> {
        let b_norm = rhs.norm_l2();
        if b_norm == 0.0 {
            return Ok(PeriodicField::zero(self.basis.clone()));
        }
        let mut x = PeriodicField::zero(self.basis.clone());
        let mut r = rhs.clone();
        let mut z = self.apply_h0_inverse(&r);
        let mut p = z.clone();
        let mut rz = r.inner(&z).re;
        let max_iter = 20 * self.basis.num_planewaves();
        for _ in 0..max_iter {
            let ap = self.apply_a(&p);
            let pap = p.inner(&ap).re;
            if pap <= 0.0 {
                return Err(Error::NotPositiveDefinite(
                    "CG detected a nonpositive curvature direction".into(),
                ));
            }
            let alpha = Complex64::new(rz / pap, 0.0);
            x = x.add(&p.scaled(alpha));
            r = r.sub(&ap.scaled(alpha));
            if r.norm_l2() <= CG_TOL * b_norm {
                return Ok(x);
            }
            z = self.apply_h0_inverse(&r);
            let rz_new = r.inner(&z).re;
            let beta = Complex64::new(rz_new / rz, 0.0);
            p = z.add(&p.scaled(beta));
            rz = rz_new;
        }
        Err(Error::EstimatorUnavailable(format!(
            "CG did not reach {CG_TOL:.0e} relative residual"
        )))
    }
}

/// Occupied-cluster residuals `r_i = ε_i φ_i − A φ_i`, supported in
/// `V_N^⊥` (the in-space part is zeroed after being recorded as a solver
/// quality diagnostic).
pub struct ResidualSet {
    residuals: Vec<PeriodicField>,
    /// Shifted occupied eigenvalues `ε_{i,N}` at [`Self::shift`].
    eps: Vec<f64>,
    /// Shifted `ε_{N_el+1,N}`.
    eps_next: f64,
    shift: f64,
    in_space_norms: Vec<f64>,
}

impl ResidualSet {
    pub fn residuals(&self) -> &[PeriodicField] {
        &self.residuals
    }

    pub fn n_el(&self) -> usize {
        self.residuals.len()
    }

    pub fn eps(&self) -> &[f64] {
        &self.eps
    }

    pub fn eps_next(&self) -> f64 {
        self.eps_next
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// Coarse residual norms measured before zeroing.
    pub fn in_space_norms(&self) -> &[f64] {
        &self.in_space_norms
    }

    fn eps_at(&self, shift: f64) -> (Vec<f64>, f64) {
        let delta = shift - self.shift;
        (
            self.eps.iter().map(|e| e + delta).collect(),
            self.eps_next + delta,
        )
    }
}

/// Computes the occupied residuals of a spectral slice against the full
/// operator of `split`. Residuals are shift-independent; the stored
/// eigenvalues are expressed at the split's shift.
pub fn residuals(slice: &SpectralSlice, split: &SplitOperator) -> Result<ResidualSet> {
    let n_el = slice.n_el();
    if slice.eigenvalues().len() < n_el + 1 {
        return Err(Error::InconsistentInputs(
            "need N_el + 1 eigenpairs for the gap constant".into(),
        ));
    }
    let mut res = Vec::with_capacity(n_el);
    let mut in_space_norms = Vec::with_capacity(n_el);
    for i in 0..n_el {
        let phi = &slice.eigenvectors()[i];
        let lambda = slice.eigenvalues()[i];
        let full = phi
            .scaled(Complex64::new(lambda, 0.0))
            .sub(&split.vtot().apply(0.0, phi));
        let coarse_norm = full.restricted_to(split.mask()).norm_l2();
        if coarse_norm > 1e-8 {
            return Err(Error::InconsistentInputs(format!(
                "coarse residual norm {coarse_norm:.3e}; slice and operator disagree"
            )));
        }
        in_space_norms.push(coarse_norm);
        res.push(full.perp_component(split.mask()));
    }
    let s = split.shift();
    let eps = slice.eigenvalues()[..n_el].iter().map(|l| l + s).collect();
    let eps_next = slice.eigenvalues()[n_el] + s;
    Ok(ResidualSet {
        residuals: res,
        eps,
        eps_next,
        shift: s,
        in_space_norms,
    })
}

/// The relative-gap constant `c_N = (1 − ε_last/ε_next)⁻¹`; requires
/// `0 < ε_last < ε_next` in the shifted frame.
pub fn relative_gap_constant(eps_last: f64, eps_next: f64) -> Result<f64> {
    if !(eps_last > 0.0) {
        return Err(Error::EstimatorUnavailable(format!(
            "nonpositive shifted eigenvalue ε_last = {eps_last:.6e}"
        )));
    }
    if !(eps_next > eps_last) {
        return Err(Error::EstimatorUnavailable(format!(
            "nonpositive relative gap: ε_last = {eps_last:.6e}, ε_next = {eps_next:.6e}"
        )));
    }
    Ok(1.0 / (1.0 - eps_last / eps_next))
}

/// Value of an η-type estimator together with the per-orbital pieces the
/// guaranteed corrections reuse.
pub struct EtaParts {
    pub eta_sq: f64,
    /// The approximate preconditioned residuals `χ_i` (for the full
    /// inversion, the exact solves `A⁻¹ r_i`).
    pub chi: Vec<PeriodicField>,
    pub chi_norms: Vec<f64>,
    /// `‖H₀⁻¹ r_i‖`, the seed of the Neumann remainder estimate.
    pub h0inv_norms: Vec<f64>,
}

fn eta_from_chi(
    res: &ResidualSet,
    split: &SplitOperator,
    chi: Vec<PeriodicField>,
    h0inv_norms: Vec<f64>,
) -> Result<EtaParts> {
    let (eps, eps_next) = res.eps_at(split.shift());
    let eps_last = eps[eps.len() - 1];
    let cn = relative_gap_constant(eps_last, eps_next)?;
    let mut residual_term = 0.0;
    let mut norm_term = 0.0;
    let mut chi_norms = Vec::with_capacity(chi.len());
    for (r, x) in res.residuals().iter().zip(&chi) {
        residual_term += r.inner(x).re;
        let n = x.norm_l2();
        chi_norms.push(n);
        norm_term += n * n;
    }
    let eta_sq = residual_term + 4.0 * eps_last * cn * cn * norm_term;
    Ok(EtaParts {
        eta_sq,
        chi,
        chi_norms,
        h0inv_norms,
    })
}

/// Full-inversion estimator: solves `A x_i = r_i` in the reference basis.
pub fn eta_full(res: &ResidualSet, split: &SplitOperator) -> Result<EtaParts> {
    let mut chi = Vec::with_capacity(res.n_el());
    let mut h0inv_norms = Vec::with_capacity(res.n_el());
    for r in res.residuals() {
        chi.push(split.solve_full(r)?);
        h0inv_norms.push(split.apply_h0_inverse(r).norm_l2());
    }
    eta_from_chi(res, split, chi, h0inv_norms)
}

/// Neumann-truncated estimator: `χ_i = Σ_{n=0}^{L} (−H₀⁻¹W)ⁿ H₀⁻¹ r_i`.
/// For `L = 0` and residuals supported in `V_N^⊥` this is a pure diagonal
/// solve.
pub fn eta_truncated(
    res: &ResidualSet,
    split: &SplitOperator,
    order: NeumannOrder,
) -> Result<EtaParts> {
    let mut chi = Vec::with_capacity(res.n_el());
    let mut h0inv_norms = Vec::with_capacity(res.n_el());
    for r in res.residuals() {
        let y = split.apply_h0_inverse(r);
        h0inv_norms.push(y.norm_l2());
        let x = match order {
            NeumannOrder::Zeroth => y,
            NeumannOrder::First => {
                let correction = split.apply_h0_inverse(&split.apply_w(&y));
                y.sub(&correction)
            }
        };
        chi.push(x);
    }
    eta_from_chi(res, split, chi, h0inv_norms)
}

/// Upper bound on `‖H₀⁻¹ W‖`: a residual-built rank-`N_el` term
/// `√λ_max(R*R)` plus `‖V‖_∞ / ε_mid` plus the perp-block term
/// `(‖V − ⟨V⟩‖_∞ + ‖V‖_∞) / (E_cut + ⟨V⟩ + s)`.
///
/// `ε_mid` is `ε_{N_el,N}`; `use_next_eigenvalue` switches to the sharper
/// `ε_{N_el+1,N}` reading of that denominator.
pub fn opnorm_bound(
    res: &ResidualSet,
    split: &SplitOperator,
    use_next_eigenvalue: bool,
) -> Result<f64> {
    let (eps, eps_next) = res.eps_at(split.shift());
    let eps_last = eps[eps.len() - 1];
    if !(eps_last > 0.0) {
        return Err(Error::EstimatorUnavailable(format!(
            "operator-norm bound needs ε_last > 0, got {eps_last:.6e}"
        )));
    }

    // ‖Σ_i |φ_i⟩⟨r_i| / ε_i‖ = √λ_max(R*R) with R = [r_i / ε_i].
    let n = res.n_el();
    let mut gram = Array2::<Complex64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            gram[(i, j)] = res.residuals()[i].inner(&res.residuals()[j]) / (eps[i] * eps[j]);
        }
    }
    let (vals, _) = gram
        .eigh(UPLO::Lower)
        .map_err(|e| Error::EstimatorUnavailable(format!("R*R eigensolve failed: {e}")))?;
    let lam_max = vals.iter().fold(0.0f64, |m, &v| m.max(v));
    let residual_term = lam_max.max(0.0).sqrt();

    let eps_mid = if use_next_eigenvalue { eps_next } else { eps_last };
    let middle_term = split.vtot().sup_norm() / eps_mid;

    let perp_term = perp_block_term(
        split.vtot().fluct_sup_norm(),
        split.vtot().sup_norm(),
        split.mask().ecut(),
        split.vtot().mean(),
        split.shift(),
    )?;

    Ok(residual_term + middle_term + perp_term)
}

/// `(‖V − ⟨V⟩‖_∞ + ‖V‖_∞) / (E_cut + ⟨V⟩ + s)`, the perp-block part of the
/// operator-norm estimate. `E_cut` is the mask cutoff, a floor for the perp
/// kinetic energies.
pub fn perp_block_term(fluct_sup: f64, sup: f64, ecut: f64, mean: f64, shift: f64) -> Result<f64> {
    let denom = ecut + mean + shift;
    if denom <= 0.0 {
        return Err(Error::EstimatorUnavailable(format!(
            "perp-block denominator {denom:.6e} not positive"
        )));
    }
    Ok((fluct_sup + sup) / denom)
}

/// Remainder estimates `ẽ_{i,N,L} = q^{L+1} ‖H₀⁻¹ r_i‖ / (1 − q)` for the
/// Neumann truncation at order `L`, valid when `q ≥ ‖H₀⁻¹W‖` and `q < 1`.
pub fn neumann_remainder(
    res: &ResidualSet,
    split: &SplitOperator,
    order: NeumannOrder,
    opnorm_q: f64,
) -> Result<Vec<f64>> {
    let norms: Vec<f64> = res
        .residuals()
        .iter()
        .map(|r| split.apply_h0_inverse(r).norm_l2())
        .collect();
    neumann_remainder_from_norms(&norms, order, opnorm_q)
}

fn neumann_remainder_from_norms(
    h0inv_norms: &[f64],
    order: NeumannOrder,
    opnorm_q: f64,
) -> Result<Vec<f64>> {
    if !(opnorm_q < 1.0) {
        return Err(Error::EstimatorUnavailable(format!(
            "operator-norm bound q = {opnorm_q:.6e} is not below one"
        )));
    }
    let power = opnorm_q.powi(order.level() as i32 + 1);
    Ok(h0inv_norms
        .iter()
        .map(|n| power * n / (1.0 - opnorm_q))
        .collect())
}

/// Guaranteed estimator at order `L`: the truncated value plus the
/// remainder corrections
/// `Σ_i [‖r_i‖ẽ_i + 4 ε_last c_N² (2 ẽ_i ‖χ_i‖ + ẽ_i²)]`.
pub fn eta_guaranteed(
    res: &ResidualSet,
    split: &SplitOperator,
    order: NeumannOrder,
    opnorm_q: f64,
) -> Result<(f64, EtaParts)> {
    let parts = eta_truncated(res, split, order)?;
    let remainders = neumann_remainder_from_norms(&parts.h0inv_norms, order, opnorm_q)?;
    let (eps, eps_next) = res.eps_at(split.shift());
    let eps_last = eps[eps.len() - 1];
    let cn = relative_gap_constant(eps_last, eps_next)?;
    let mut correction = 0.0;
    for i in 0..res.n_el() {
        let r_norm = res.residuals()[i].norm_l2();
        let e = remainders[i];
        correction += r_norm * e + 4.0 * eps_last * cn * cn * (2.0 * e * parts.chi_norms[i] + e * e);
    }
    Ok((parts.eta_sq + correction, parts))
}

/// Computable lower bound `μ = (Σ ε_{i,N} − η²)/N_el` on the mean occupied
/// eigenvalue of the reference-space operator, reported unshifted.
pub fn mu_lower_bound(eps_shifted: &[f64], eta_sq: f64, shift: f64) -> f64 {
    let n = eps_shifted.len() as f64;
    (eps_shifted.iter().sum::<f64>() - eta_sq) / n - shift
}

/// Splits the certified error at iterate `m` into its two parts:
///
/// * `err_disc = Tr((H_{ρ_m} − μ)γ_{m+1}) = Σλ_{i,m+1} − N_el μ`, which the
///   definition of `μ` collapses exactly to `η²`; the cancellation is
///   carried out symbolically so the identity is not lost to round-off;
/// * `err_scf = Tr(H_{ρ_m}γ_m) − Tr(H_{ρ_m}γ_{m+1}) = Tr(H_{ρ_m}γ_m) − Σλ`.
///
/// Values within round-off of zero are clamped at zero; more negative
/// values indicate an internal inconsistency.
pub fn error_components(
    lambda_next: &[f64],
    eta_sq: f64,
    tr_h_gamma_m: f64,
) -> Result<(f64, f64)> {
    let lambda_sum: f64 = lambda_next.iter().sum();
    let scale = 1.0f64.max(lambda_next.iter().map(|l| l.abs()).sum());
    let err_disc = eta_sq;
    if err_disc < -1e-12 * scale {
        return Err(Error::InconsistentInputs(format!(
            "negative discretization component {err_disc:.3e}"
        )));
    }
    let err_scf = tr_h_gamma_m - lambda_sum;
    let scf_scale = scale.max(tr_h_gamma_m.abs());
    if err_scf < -1e-12 * scf_scale {
        return Err(Error::InconsistentInputs(format!(
            "negative SCF component {err_scf:.3e}"
        )));
    }
    Ok((err_disc.max(0.0), err_scf.max(0.0)))
}

/// Target for the non-optimized guaranteed variants: the smallest shift
/// with `‖H₀⁻¹W‖` bounded away from one.
const GUARANTEED_Q_TARGET: f64 = 0.9;

/// Smallest shift at or above the base shift for which the operator-norm
/// bound drops to [`GUARANTEED_Q_TARGET`]. The bound decreases
/// monotonically in the shift, so march upward and bisect.
pub fn guaranteed_shift(
    res: &ResidualSet,
    base: &SplitOperator,
    use_next_eigenvalue: bool,
) -> Result<SplitOperator> {
    let q_of = |split: &SplitOperator| opnorm_bound(res, split, use_next_eigenvalue);
    if q_of(base)? <= GUARANTEED_Q_TARGET {
        return base.with_shift(base.shift());
    }
    let mut below = base.shift();
    let mut step = 0.5f64.max(0.05 * below.abs());
    let mut above = None;
    for _ in 0..60 {
        let trial = below + step;
        match base.with_shift(trial) {
            Ok(split) if q_of(&split)? <= GUARANTEED_Q_TARGET => {
                above = Some(trial);
                break;
            }
            _ => {
                below = trial;
                step *= 2.0;
            }
        }
    }
    let mut above = above.ok_or_else(|| {
        Error::EstimatorUnavailable(format!(
            "no shift brings the operator-norm bound to {GUARANTEED_Q_TARGET}"
        ))
    })?;
    for _ in 0..40 {
        let mid = 0.5 * (below + above);
        let ok = match base.with_shift(mid) {
            Ok(split) => q_of(&split)? <= GUARANTEED_Q_TARGET,
            Err(_) => false,
        };
        if ok {
            above = mid;
        } else {
            below = mid;
        }
        if (above - below) < 1e-3 * 1.0f64.max(above.abs()) {
            break;
        }
    }
    base.with_shift(above)
}

/// Bracketed golden-section minimization of the guaranteed bound over the
/// shift, constrained to shifts with `A > 0` and `‖H₀⁻¹W‖ < 1`. Returns the
/// best shift and the bound value there.
pub fn optimize_shift(
    res: &ResidualSet,
    base: &SplitOperator,
    order: NeumannOrder,
    use_next_eigenvalue: bool,
) -> Result<(f64, f64)> {
    let objective = |s: f64| -> Option<f64> {
        let split = base.with_shift(s).ok()?;
        let q = opnorm_bound(res, &split, use_next_eigenvalue).ok()?;
        if q >= 1.0 {
            return None;
        }
        eta_guaranteed(res, &split, order, q).ok().map(|(v, _)| v)
    };

    // Find an admissible starting shift: the base shift if it qualifies,
    // otherwise march upward (q decreases monotonically with the shift).
    let s0 = base.shift();
    let mut lo = s0;
    let mut f_lo = objective(lo);
    if f_lo.is_none() {
        let mut step = 0.5f64.max(0.05 * s0.abs());
        let mut below = s0;
        let mut found = None;
        for _ in 0..60 {
            let trial = below + step;
            if let Some(v) = objective(trial) {
                found = Some((below, trial, v));
                break;
            }
            below = trial;
            step *= 2.0;
        }
        let (mut bad, mut good, mut f_good) = found.ok_or_else(|| {
            Error::EstimatorUnavailable("no admissible shift with ‖H₀⁻¹W‖ < 1 found".into())
        })?;
        // Tighten toward the admissibility edge. The minimum cannot sit at
        // the edge (the bound blows up as q → 1) but the bracket should
        // start near it.
        for _ in 0..40 {
            let mid = 0.5 * (bad + good);
            match objective(mid) {
                Some(v) => {
                    good = mid;
                    f_good = v;
                }
                None => bad = mid,
            }
        }
        lo = good;
        f_lo = Some(f_good);
    }
    let f_lo = f_lo.expect("admissible by construction");

    // Expand upward until the objective turns increasing.
    let mut hi = lo + 1.0f64.max(0.1 * lo.abs());
    let mut f_hi = objective(hi).unwrap_or(f64::INFINITY);
    let mut best = if f_hi < f_lo { (hi, f_hi) } else { (lo, f_lo) };
    for _ in 0..60 {
        if f_hi > best.1 {
            break;
        }
        hi = lo + 2.0 * (hi - lo);
        f_hi = objective(hi).unwrap_or(f64::INFINITY);
        if f_hi < best.1 {
            best = (hi, f_hi);
        }
    }

    // Golden-section on [lo, hi], relative interval tolerance 1e-3.
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let mut fc = objective(c).unwrap_or(f64::INFINITY);
    let mut fd = objective(d).unwrap_or(f64::INFINITY);
    for _ in 0..200 {
        if (b - a).abs() < 1e-3 * 1.0f64.max(0.5 * (a + b).abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = objective(c).unwrap_or(f64::INFINITY);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = objective(d).unwrap_or(f64::INFINITY);
        }
    }
    for (s, f) in [(c, fc), (d, fd)] {
        if f < best.1 {
            best = (s, f);
        }
    }
    Ok(best)
}

/// How the estimator stack is configured for a run.
#[derive(Debug, Clone)]
pub struct EstimatorConfig {
    pub variants: Vec<BoundVariant>,
    pub gap_tol: f64,
    /// Margin used by the automatic shift: `s = max(0, −λ_1 + margin)`.
    pub shift_margin: f64,
    /// Use `ε_{N_el+1,N}` instead of `ε_{N_el,N}` in the middle term of the
    /// operator-norm estimate.
    pub use_next_eigenvalue_opnorm: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            variants: BoundVariant::all().to_vec(),
            gap_tol: crate::linear_solver::DEFAULT_GAP_TOL,
            shift_margin: 0.1,
            use_next_eigenvalue_opnorm: false,
        }
    }
}

/// Result of one estimator variant at one iterate (one Bloch fiber).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariantOutcome {
    pub variant: BoundVariant,
    pub eta_sq: Option<f64>,
    /// Lower bound on the mean occupied eigenvalue, unshifted frame.
    pub mu_lb: Option<f64>,
    pub err_disc: Option<f64>,
    pub shift_used: f64,
    pub opnorm_bound: Option<f64>,
    pub guaranteed: bool,
    pub note: Option<String>,
    /// Wall-clock seconds spent in this bound computation.
    pub seconds: f64,
}

/// Everything the bound machinery produces for one fiber at one iterate.
pub struct FiberEvaluation {
    /// The certificate diagonalization of `Π_N H_{ρ_m} Π_N` (unshifted).
    pub slice_next: SpectralSlice,
    /// `Tr(H_{ρ_m} γ_m)` for this fiber.
    pub tr_h_gamma_m: f64,
    /// `Tr(H_{ρ_m}γ_m) − Σλ_{i,m+1} ≥ 0`.
    pub err_scf: f64,
    pub default_shift: f64,
    pub outcomes: Vec<VariantOutcome>,
}

/// Runs the bound ladder for one fiber at one iterate: diagonalizes the
/// projected `H_{ρ_m}`, forms the residuals, and evaluates every requested
/// variant. `orbs_m` is the fiber's occupied set at iterate `m`; `vtot` is
/// built from the (global) density of iterate `m`.
pub fn evaluate_fiber(
    vtot: &Arc<TotalPotential>,
    basis: &Arc<PlanewaveBasis>,
    mask: &SphereMask,
    orbs_m: &OrbitalSet,
    convex: bool,
    cfg: &EstimatorConfig,
) -> Result<FiberEvaluation> {
    let n_el = orbs_m.len();
    let slice = diagonalize_with_potential(vtot, basis, mask, 0.0, n_el, n_el + 1, cfg.gap_tol)?;

    let mut tr_h_gamma_m = 0.0;
    for phi in orbs_m.orbitals() {
        tr_h_gamma_m += phi.inner(&vtot.apply(0.0, phi)).re;
    }
    let lambda_next = &slice.eigenvalues()[..n_el];
    let lambda_sum: f64 = lambda_next.iter().sum();
    let scf_scale = 1.0f64
        .max(lambda_next.iter().map(|l| l.abs()).sum::<f64>())
        .max(tr_h_gamma_m.abs());
    let err_scf = tr_h_gamma_m - lambda_sum;
    if err_scf < -1e-12 * scf_scale {
        return Err(Error::InconsistentInputs(format!(
            "negative SCF component {err_scf:.3e}"
        )));
    }
    let err_scf = err_scf.max(0.0);

    let default_shift = if slice.eigenvalues()[0] > cfg.shift_margin {
        0.0
    } else {
        -slice.eigenvalues()[0] + cfg.shift_margin
    };
    let split = SplitOperator::new(vtot.clone(), basis, mask, default_shift)?;
    let res = residuals(&slice, &split)?;

    let mut outcomes = Vec::with_capacity(cfg.variants.len());
    let mut shared_guaranteed: Option<Result<(SplitOperator, f64)>> = None;
    for &variant in &cfg.variants {
        let started = Instant::now();
        if matches!(variant, BoundVariant::Eta0G | BoundVariant::Eta1G)
            && shared_guaranteed.is_none()
        {
            // The admissible-shift search depends only on the residual set,
            // not on the Neumann order; do it once per iterate.
            shared_guaranteed = Some(
                guaranteed_shift(&res, &split, cfg.use_next_eigenvalue_opnorm).and_then(
                    |split_g| {
                        let q = opnorm_bound(&res, &split_g, cfg.use_next_eigenvalue_opnorm)?;
                        Ok((split_g, q))
                    },
                ),
            );
        }
        let outcome = evaluate_variant(
            variant,
            &res,
            &split,
            shared_guaranteed.as_ref(),
            lambda_next,
            convex,
            cfg.use_next_eigenvalue_opnorm,
        );
        let seconds = started.elapsed().as_secs_f64();
        let outcome = match outcome {
            Ok(mut o) => {
                o.seconds = seconds;
                o
            }
            Err(e) => VariantOutcome {
                variant,
                eta_sq: None,
                mu_lb: None,
                err_disc: None,
                shift_used: default_shift,
                opnorm_bound: None,
                guaranteed: false,
                note: Some(e.to_string()),
                seconds,
            },
        };
        outcomes.push(outcome);
    }

    Ok(FiberEvaluation {
        slice_next: slice,
        tr_h_gamma_m,
        err_scf,
        default_shift,
        outcomes,
    })
}

fn evaluate_variant(
    variant: BoundVariant,
    res: &ResidualSet,
    split: &SplitOperator,
    shared_guaranteed: Option<&Result<(SplitOperator, f64)>>,
    lambda_next: &[f64],
    convex: bool,
    use_next: bool,
) -> Result<VariantOutcome> {
    let (eta_sq, shift_used, opnorm) = match variant {
        BoundVariant::EtaFull => {
            let parts = eta_full(res, split)?;
            (parts.eta_sq, split.shift(), None)
        }
        BoundVariant::Eta0 | BoundVariant::Eta1 => {
            let order = variant.neumann_order().unwrap();
            let parts = eta_truncated(res, split, order)?;
            (parts.eta_sq, split.shift(), None)
        }
        BoundVariant::Eta0G | BoundVariant::Eta1G => {
            let order = variant.neumann_order().unwrap();
            // The positivity shift rarely brings ‖H₀⁻¹W‖ below one on its
            // own; move to the smallest shift that does (shared per iterate).
            let (split_g, q) = match shared_guaranteed.expect("precomputed by caller") {
                Ok(pair) => pair,
                Err(e) => {
                    return Err(Error::EstimatorUnavailable(e.to_string()));
                }
            };
            let (eta_g, _) = eta_guaranteed(res, split_g, order, *q)?;
            (eta_g, split_g.shift(), Some(*q))
        }
        BoundVariant::Eta0GOpt | BoundVariant::Eta1GOpt => {
            let order = variant.neumann_order().unwrap();
            let (s_opt, eta_g) = optimize_shift(res, split, order, use_next)?;
            let q = {
                let opt_split = split.with_shift(s_opt)?;
                opnorm_bound(res, &opt_split, use_next).ok()
            };
            (eta_g, s_opt, q)
        }
    };

    let (eps_at_shift, _) = res.eps_at(shift_used);
    let mu = mu_lower_bound(&eps_at_shift, eta_sq, shift_used);
    // err_scf is variant-independent; pass Σλ so only err_disc is formed here.
    let lambda_sum: f64 = lambda_next.iter().sum();
    let (err_disc, _) = error_components(lambda_next, eta_sq, lambda_sum)?;

    let guaranteed = variant.guaranteed_family()
        && convex
        && (!variant.needs_opnorm() || opnorm.map_or(false, |q| q < 1.0));

    Ok(VariantOutcome {
        variant,
        eta_sq: Some(eta_sq),
        mu_lb: Some(mu),
        err_disc: Some(err_disc),
        shift_used,
        opnorm_bound: opnorm,
        guaranteed,
        note: None,
        seconds: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear_solver::{diagonalize_projected, DEFAULT_GAP_TOL};
    use crate::model::{
        constant_density, random_potential_1d, ExternalPotential, Functional, ModelSpec,
    };
    use crate::pw_basis::{build_basis, Lattice};
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    struct Setup {
        model: ModelSpec,
        basis: Arc<PlanewaveBasis>,
        mask: SphereMask,
        vtot: Arc<TotalPotential>,
        slice: SpectralSlice,
        split: SplitOperator,
        res: ResidualSet,
    }

    fn linear_setup(ecut_ref: f64, ecut: f64, seed: u64, n_el: usize, shift: f64) -> Setup {
        let basis = build_basis(&Lattice::line(10.0).unwrap(), ecut_ref, &[]).unwrap();
        let pot = random_potential_1d(&basis, seed, 8.0, 1.1, 100.0).unwrap();
        let model = ModelSpec::new(n_el, pot, Functional::Linear).unwrap();
        let rho = constant_density(&basis, n_el);
        let mask = basis.mask(ecut).unwrap();
        let slice =
            diagonalize_projected(&model, &rho, 0.0, &mask, n_el + 1, DEFAULT_GAP_TOL).unwrap();
        let vtot = Arc::new(TotalPotential::new(&model, &rho));
        let shift = if slice.eigenvalues()[0] + shift > 0.1 {
            shift
        } else {
            -slice.eigenvalues()[0] + 0.1
        };
        let split = SplitOperator::new(vtot.clone(), &basis, &mask, shift).unwrap();
        let res = residuals(&slice, &split).unwrap();
        Setup {
            model,
            basis,
            mask,
            vtot,
            slice,
            split,
            res,
        }
    }

    fn random_field(basis: &Arc<PlanewaveBasis>, seed: u64) -> PeriodicField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs = (0..basis.num_planewaves())
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        PeriodicField::new(basis.clone(), coeffs).unwrap()
    }

    #[test]
    fn splitting_reconstructs_operator() {
        let s = linear_setup(60.0, 20.0, 3, 2, 1.0);
        let f = random_field(&s.basis, 17);
        let direct = s.split.apply_a(&f);
        let split_sum = s.split.apply_h0(&f).add(&s.split.apply_w(&f));
        let diff = direct.sub(&split_sum).norm_l2();
        assert!(diff < 1e-11 * direct.norm_l2().max(1.0), "A ≠ H0 + W by {diff}");
    }

    #[test]
    fn w_has_zero_coarse_block() {
        let s = linear_setup(60.0, 20.0, 3, 2, 1.0);
        let f = random_field(&s.basis, 5).restricted_to(&s.mask);
        let w = s.split.apply_w(&f).restricted_to(&s.mask);
        assert!(w.norm_l2() < 1e-11);
    }

    #[test]
    fn h0_inverse_on_perp_mode_is_diagonal() {
        let s = linear_setup(60.0, 20.0, 3, 2, 1.0);
        let outside = (0..s.basis.num_planewaves())
            .find(|&i| !s.mask.contains(i))
            .unwrap();
        let n = s.basis.gvectors()[outside];
        let mode = PeriodicField::mode(s.basis.clone(), &n).unwrap();
        let inv = s.split.apply_h0_inverse(&mode);
        let expected =
            1.0 / (s.basis.kinetic_energies()[outside] + s.vtot.mean() + s.split.shift());
        assert_relative_eq!(inv.coeffs()[outside].re, expected, max_relative = 1e-13);
        let rest: f64 = inv
            .coeffs()
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != outside)
            .map(|(_, c)| c.norm_sqr())
            .sum();
        assert!(rest < 1e-26);
    }

    #[test]
    fn h0_inverse_inverts_h0() {
        let s = linear_setup(60.0, 20.0, 4, 2, 1.0);
        let f = random_field(&s.basis, 23);
        let back = s.split.apply_h0(&s.split.apply_h0_inverse(&f));
        assert!(back.sub(&f).norm_l2() < 1e-11 * f.norm_l2());
    }

    #[test]
    fn residuals_live_in_perp() {
        let s = linear_setup(80.0, 25.0, 7, 3, 0.5);
        for (r, &pre) in s.res.residuals().iter().zip(s.res.in_space_norms()) {
            assert!(pre < 1e-10);
            assert_eq!(r.restricted_to(&s.mask).norm_l2(), 0.0);
            assert!(r.norm_l2() > 0.0);
        }
    }

    #[test]
    fn exact_solution_in_reference_space_has_zero_residuals() {
        // Mask = full reference sphere: residuals vanish and so do all etas.
        let s = linear_setup(40.0, 40.0, 9, 2, 1.0);
        for r in s.res.residuals() {
            assert!(r.norm_l2() < 1e-10);
        }
        let full = eta_full(&s.res, &s.split).unwrap();
        let zero = eta_truncated(&s.res, &s.split, NeumannOrder::Zeroth).unwrap();
        assert!(full.eta_sq.abs() < 1e-18);
        assert!(zero.eta_sq.abs() < 1e-18);
    }

    #[test]
    fn free_model_has_zero_bounds() {
        let basis = build_basis(&Lattice::line(10.0).unwrap(), 40.0, &[]).unwrap();
        let model =
            ModelSpec::new(1, ExternalPotential::zero(basis.clone()), Functional::Linear).unwrap();
        let rho = constant_density(&basis, 1);
        let mask = basis.mask(10.0).unwrap();
        let vtot = Arc::new(TotalPotential::new(&model, &rho));
        let cfg = EstimatorConfig::default();
        let orbs = diagonalize_projected(&model, &rho, 0.0, &mask, 2, DEFAULT_GAP_TOL)
            .unwrap()
            .occupied(&mask)
            .unwrap();
        let eval = evaluate_fiber(&vtot, &basis, &mask, &orbs, true, &cfg).unwrap();
        assert!(eval.err_scf < 1e-12);
        for o in &eval.outcomes {
            assert!(o.err_disc.unwrap() < 1e-12, "{:?}", o.variant);
        }
    }

    #[test]
    fn gap_constant_arithmetic() {
        assert_relative_eq!(relative_gap_constant(1.0, 2.0).unwrap(), 2.0);
        assert!(relative_gap_constant(2.0, 1.0).is_err());
        assert!(relative_gap_constant(-1.0, 2.0).is_err());
        assert!(relative_gap_constant(1.0, 1.0).is_err());
    }

    #[test]
    fn mu_arithmetic() {
        assert_relative_eq!(mu_lower_bound(&[1.0, 1.0, 1.0], 0.3, 0.0), 0.9);
        assert_relative_eq!(mu_lower_bound(&[1.0, 1.0, 1.0], 0.0, 0.0), 1.0);
        assert_relative_eq!(mu_lower_bound(&[2.0, 2.0], 0.0, 1.5), 0.5);
    }

    #[test]
    fn remainder_arithmetic() {
        // q = 0.5, L = 0, ‖H₀⁻¹r‖ = 0.1 → ẽ = 0.1.
        let e = neumann_remainder_from_norms(&[0.1], NeumannOrder::Zeroth, 0.5).unwrap();
        assert_relative_eq!(e[0], 0.1);
        let e = neumann_remainder_from_norms(&[0.1], NeumannOrder::First, 0.5).unwrap();
        assert_relative_eq!(e[0], 0.05);
        let e = neumann_remainder_from_norms(&[0.1], NeumannOrder::Zeroth, 1e-9).unwrap();
        assert!(e[0] < 1e-9);
        assert!(neumann_remainder_from_norms(&[0.1], NeumannOrder::Zeroth, 1.0).is_err());
    }

    #[test]
    fn perp_term_arithmetic() {
        // ‖V−⟨V⟩‖∞ + ‖V‖∞ = 41, E_cut = 400, ⟨V⟩ + s = 1 → 41/401.
        let t = perp_block_term(20.0, 21.0, 400.0, 0.4, 0.6).unwrap();
        assert_relative_eq!(t, 41.0 / 401.0, epsilon = 1e-15);
        assert!(perp_block_term(1.0, 1.0, 10.0, -1.0, -9.5).is_err());
    }

    #[test]
    fn opnorm_constant_potential_reduces_to_sup_terms() {
        // V constant: residuals vanish and V − ⟨V⟩ = 0, leaving ‖V‖∞ terms.
        let basis = build_basis(&Lattice::line(10.0).unwrap(), 40.0, &[]).unwrap();
        let mut coeffs = vec![Complex64::default(); basis.num_planewaves()];
        let i0 = basis.index_of(&[0, 0, 0]).unwrap();
        coeffs[i0] = Complex64::new(2.0 * 10.0f64.sqrt(), 0.0); // V ≡ 2
        let field = PeriodicField::new(basis.clone(), coeffs).unwrap();
        let pot =
            ExternalPotential::from_field(field, crate::model::PotentialDescriptor::Zero).unwrap();
        let model = ModelSpec::new(1, pot, Functional::Linear).unwrap();
        let rho = constant_density(&basis, 1);
        let mask = basis.mask(10.0).unwrap();
        let slice = diagonalize_projected(&model, &rho, 0.0, &mask, 2, DEFAULT_GAP_TOL).unwrap();
        let vtot = Arc::new(TotalPotential::new(&model, &rho));
        let split = SplitOperator::new(vtot, &basis, &mask, 0.0).unwrap();
        let res = residuals(&slice, &split).unwrap();
        let q = opnorm_bound(&res, &split, false).unwrap();
        let eps_last = slice.eigenvalues()[0];
        let expected = 2.0 / eps_last + 2.0 / (10.0 + 2.0);
        assert_relative_eq!(q, expected, max_relative = 1e-10);
    }

    #[test]
    fn eta_hierarchy_on_linear_problem() {
        let s = linear_setup(200.0, 60.0, 42, 3, 0.0);
        let full = eta_full(&s.res, &s.split).unwrap();
        let zeroth = eta_truncated(&s.res, &s.split, NeumannOrder::Zeroth).unwrap();
        let first = eta_truncated(&s.res, &s.split, NeumannOrder::First).unwrap();
        assert!(full.eta_sq > 0.0);
        // First order should approximate the full inversion better.
        assert!(
            (first.eta_sq - full.eta_sq).abs() <= (zeroth.eta_sq - full.eta_sq).abs(),
            "η₁ not closer to η than η₀"
        );

        // Guaranteed variants dominate the full inversion at their own shift.
        let split_g = guaranteed_shift(&s.res, &s.split, false).unwrap();
        let q = opnorm_bound(&s.res, &split_g, false).unwrap();
        assert!(q <= GUARANTEED_Q_TARGET + 1e-12);
        let full_g = eta_full(&s.res, &split_g).unwrap();
        let zeroth_g = eta_truncated(&s.res, &split_g, NeumannOrder::Zeroth).unwrap();
        let first_g = eta_truncated(&s.res, &split_g, NeumannOrder::First).unwrap();
        let (g0, _) = eta_guaranteed(&s.res, &split_g, NeumannOrder::Zeroth, q).unwrap();
        let (g1, _) = eta_guaranteed(&s.res, &split_g, NeumannOrder::First, q).unwrap();
        assert!(g0 >= full_g.eta_sq * (1.0 - 1e-12));
        assert!(g1 >= full_g.eta_sq * (1.0 - 1e-12));
        assert!(g0 >= zeroth_g.eta_sq);
        assert!(g1 >= first_g.eta_sq);
    }

    #[test]
    fn remainder_dominates_true_truncation_error() {
        let s = linear_setup(200.0, 60.0, 42, 3, 0.0);
        let split = guaranteed_shift(&s.res, &s.split, false).unwrap();
        let q = opnorm_bound(&s.res, &split, false).unwrap();
        assert!(q < 1.0);
        for order in [NeumannOrder::Zeroth, NeumannOrder::First] {
            let parts = eta_truncated(&s.res, &split, order).unwrap();
            let remainders = neumann_remainder(&s.res, &split, order, q).unwrap();
            for (i, r) in s.res.residuals().iter().enumerate() {
                let exact = split.solve_full(r).unwrap();
                let err = exact.sub(&parts.chi[i]).norm_l2();
                assert!(
                    err <= remainders[i] * (1.0 + 1e-12),
                    "remainder {} does not dominate {} (order {:?})",
                    remainders[i],
                    err,
                    order
                );
            }
        }
    }

    #[test]
    fn cluster_bound_against_reference_eigenvalues() {
        let s = linear_setup(150.0, 40.0, 11, 3, 0.0);
        let rho = constant_density(&s.basis, 3);
        let full_mask = s.basis.full_mask();
        let reference =
            diagonalize_projected(&s.model, &rho, 0.0, &full_mask, 4, DEFAULT_GAP_TOL).unwrap();
        let eta = eta_full(&s.res, &s.split).unwrap().eta_sq;
        let cluster: f64 = (0..3)
            .map(|i| s.slice.eigenvalues()[i] - reference.eigenvalues()[i])
            .sum();
        assert!(cluster >= -1e-11, "variational principle violated: {cluster}");
        assert!(cluster <= eta + 1e-11, "cluster error {cluster} above η² {eta}");
    }

    #[test]
    fn dense_and_cg_solves_agree() {
        let s = linear_setup(80.0, 25.0, 13, 2, 0.5);
        for r in s.res.residuals() {
            let dense = s.split.solve_full_dense(r).unwrap();
            let cg = s.split.solve_full_cg(r).unwrap();
            let diff = dense.sub(&cg).norm_l2();
            assert!(diff <= 1e-9 * dense.norm_l2().max(1e-30), "CG drifted by {diff}");
        }
    }

    #[test]
    fn opnorm_dominates_power_iteration() {
        let s = linear_setup(120.0, 40.0, 21, 2, 0.5);
        let q = opnorm_bound(&s.res, &s.split, false).unwrap();
        // Power iteration on (H₀⁻¹W)*(H₀⁻¹W) in the reference basis.
        let mut v = random_field(&s.basis, 77);
        v = v.scaled(Complex64::new(1.0 / v.norm_l2(), 0.0));
        let mut sigma = 0.0;
        for _ in 0..120 {
            let mv = s.split.apply_h0_inverse(&s.split.apply_w(&v));
            let mtmv = s.split.apply_w(&s.split.apply_h0_inverse(&mv));
            let norm = mtmv.norm_l2();
            if norm == 0.0 {
                break;
            }
            sigma = norm.sqrt();
            v = mtmv.scaled(Complex64::new(1.0 / norm, 0.0));
        }
        assert!(q >= sigma - 1e-10, "Appendix bound {q} below measured norm {sigma}");
    }

    #[test]
    fn mu_below_reference_mean() {
        let s = linear_setup(150.0, 40.0, 11, 3, 0.0);
        let rho = constant_density(&s.basis, 3);
        let full_mask = s.basis.full_mask();
        let reference =
            diagonalize_projected(&s.model, &rho, 0.0, &full_mask, 4, DEFAULT_GAP_TOL).unwrap();
        let eta = eta_full(&s.res, &s.split).unwrap().eta_sq;
        let (eps, _) = s.res.eps_at(s.split.shift());
        let mu = mu_lower_bound(&eps, eta, s.split.shift());
        let ref_mean: f64 = reference.eigenvalues()[..3].iter().sum::<f64>() / 3.0;
        assert!(mu <= ref_mean + 1e-11, "μ = {mu} above reference mean {ref_mean}");
    }

    #[test]
    fn error_components_guard_negative_values() {
        assert!(error_components(&[1.0, 2.0], -1.0, 10.0).is_err());
        assert!(error_components(&[1.0, 2.0], 0.5, 2.0).is_err());
        let (d, s) = error_components(&[1.0, 2.0], 0.5, 3.5).unwrap();
        assert_relative_eq!(d, 0.5);
        assert_relative_eq!(s, 0.5);
    }

    #[test]
    fn optimized_shift_improves_guaranteed_bound() {
        let s = linear_setup(200.0, 60.0, 42, 3, 0.0);
        let q0 = opnorm_bound(&s.res, &s.split, false).unwrap();
        let base_value = if q0 < 1.0 {
            eta_guaranteed(&s.res, &s.split, NeumannOrder::Zeroth, q0)
                .unwrap()
                .0
        } else {
            f64::INFINITY
        };
        let (s_opt, value) = optimize_shift(&s.res, &s.split, NeumannOrder::Zeroth, false).unwrap();
        assert!(value <= base_value * (1.0 + 1e-9), "optimization made it worse");
        let opt_split = s.split.with_shift(s_opt).unwrap();
        let q_opt = opnorm_bound(&s.res, &opt_split, false).unwrap();
        assert!(q_opt < 1.0);
    }

    #[test]
    fn shifted_frames_report_identical_components() {
        // Evaluating the trace formulas in two shifted frames with μ moved
        // consistently must give the same unshifted components.
        let s = linear_setup(120.0, 40.0, 5, 2, 0.5);
        let eta = eta_full(&s.res, &s.split).unwrap().eta_sq;
        let lambda: Vec<f64> = s.slice.eigenvalues()[..2].to_vec();
        let (eps, _) = s.res.eps_at(s.split.shift());
        let mu = mu_lower_bound(&eps, eta, s.split.shift());
        let native = lambda.iter().sum::<f64>() - 2.0 * mu;
        for trial in [0.0, 0.7, 3.0] {
            // Shift the frame: eigenvalues and μ move together.
            let shifted_sum: f64 = lambda.iter().map(|l| l + trial).sum();
            let framed = shifted_sum - 2.0 * (mu + trial);
            assert_relative_eq!(framed, native, max_relative = 1e-10, epsilon = 1e-10);
        }
    }
}
