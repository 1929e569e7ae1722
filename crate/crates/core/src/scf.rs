//! The self-consistent field loop: density-mixing fixed-point iteration
//! over one or more Bloch fibers, with full history capture and an optional
//! per-iteration bound hook.
//!
//! At iterate `m` the certificate machinery needs the Hamiltonian built from
//! the density of `γ_{N,m}` itself, not from the mixed input density, so the
//! hook performs its own diagonalization of `H_{ρ_{γ_m}}`. With plain
//! fixed-point iteration the two coincide; with damping or Anderson mixing
//! they do not, and only the hook's version makes `err_scf ≥ 0` a theorem.

use std::sync::Arc;

use ndarray::{Array1, Array2};
use ndarray_linalg::LeastSquaresSvd;
use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    evaluate_fiber, BoundVariant, EstimatorConfig, FiberEvaluation, VariantOutcome,
};
use crate::linear_solver::diagonalize_with_potential;
use crate::model::{
    self, constant_density, density_grid_values, ModelSpec, OrbitalSet, TotalPotential,
};
use crate::pw_basis::{density_basis, PeriodicField, PlanewaveBasis, SphereMask};

/// Density-mixing scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum Mixing {
    /// `ρ_in ← ρ_in + β (ρ_out − ρ_in)`.
    Damped { beta: f64 },
    /// Anderson acceleration on the density residual with the given history
    /// depth, damped by `beta`; restarts when the least-squares system is
    /// ill-conditioned.
    Anderson { depth: usize, beta: f64 },
}

impl Default for Mixing {
    fn default() -> Self {
        Mixing::Damped { beta: 0.8 }
    }
}

/// Starting density for the fixed point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "guess", rename_all = "snake_case")]
pub enum InitialGuess {
    /// Constant density `N_el / |Ω|`.
    Constant,
    /// A positive normalized random density, reproducible from the seed.
    Random { seed: u64 },
}

impl Default for InitialGuess {
    fn default() -> Self {
        InitialGuess::Constant
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScfConfig {
    /// Stop when `‖ρ_{m+1} − ρ_m‖_{L²}` of successive iterate densities
    /// drops below this.
    pub density_tol: f64,
    pub max_iter: usize,
    pub mixing: Mixing,
    pub initial_guess: InitialGuess,
}

impl Default for ScfConfig {
    fn default() -> Self {
        ScfConfig {
            density_tol: 1e-10,
            max_iter: 100,
            mixing: Mixing::default(),
            initial_guess: InitialGuess::default(),
        }
    }
}

impl ScfConfig {
    pub fn validate(&self) -> Result<()> {
        match self.mixing {
            Mixing::Damped { beta } => {
                if !(beta > 0.0 && beta <= 1.0) {
                    return Err(Error::Config(format!("damping beta {beta} not in (0, 1]")));
                }
            }
            Mixing::Anderson { depth, beta } => {
                if depth < 1 {
                    return Err(Error::Config("anderson depth must be ≥ 1".into()));
                }
                if !(beta > 0.0 && beta <= 1.0) {
                    return Err(Error::Config(format!("damping beta {beta} not in (0, 1]")));
                }
            }
        }
        if !(self.density_tol > 0.0) {
            return Err(Error::Config("density_tol must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be positive".into()));
        }
        Ok(())
    }
}

/// The discretization the SCF runs on: one basis/mask pair per Bloch fiber
/// with equal quadrature weights. A single Γ fiber reproduces the plain
/// single-cell solver.
#[derive(Clone)]
pub struct FiberSetup {
    pub bases: Vec<Arc<PlanewaveBasis>>,
    pub masks: Vec<SphereMask>,
}

impl FiberSetup {
    /// Single-fiber setup at the reference basis of the model.
    pub fn gamma(reference: &Arc<PlanewaveBasis>, ecut: f64) -> Result<FiberSetup> {
        let mask = reference.mask(ecut)?;
        Ok(FiberSetup {
            bases: vec![reference.clone()],
            masks: vec![mask],
        })
    }

    pub fn len(&self) -> usize {
        self.bases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bases.is_empty()
    }

    /// Equal Brillouin-zone quadrature weight of each fiber.
    pub fn weight(&self) -> f64 {
        1.0 / self.bases.len() as f64
    }
}

/// Weighted Brillouin-zone average of per-fiber densities, on the shared
/// density carrier.
pub fn average_density(orbital_sets: &[OrbitalSet], weight: f64) -> Result<PeriodicField> {
    let first = orbital_sets
        .first()
        .ok_or_else(|| Error::Model("no fibers".into()))?;
    let grid_len = first.basis().grid_len();
    let mut acc = vec![0.0; grid_len];
    for orbs in orbital_sets {
        let rho = density_grid_values(orbs)?;
        if rho.len() != grid_len {
            return Err(Error::Incompatible("fibers do not share a grid".into()));
        }
        for (a, r) in acc.iter_mut().zip(&rho) {
            *a += weight * r;
        }
    }
    let carrier = density_basis(first.basis());
    let values: Vec<Complex64> = acc.iter().map(|&r| Complex64::new(r, 0.0)).collect();
    PeriodicField::from_grid(carrier, &values)
}

/// Total energy per unit cell of a Bloch state: weighted fiber kinetic
/// energies plus external and functional terms of the averaged density.
pub fn energy_per_cell(
    model: &ModelSpec,
    orbital_sets: &[OrbitalSet],
    weight: f64,
    rho: &PeriodicField,
) -> f64 {
    let kinetic: f64 = orbital_sets
        .iter()
        .map(|orbs| weight * model::kinetic_energy(orbs))
        .sum();
    kinetic + model::external_pairing(model, rho) + model::functional_energy(model, rho)
}

/// One production SCF step: diagonalizes `H_{ρ_in}` in every fiber (no
/// shift), Aufbau-fills, and returns the new orbitals with their density.
pub fn scf_step(
    model: &ModelSpec,
    rho_in: &PeriodicField,
    fibers: &FiberSetup,
    gap_tol: f64,
) -> Result<(Vec<OrbitalSet>, PeriodicField)> {
    let vtot = TotalPotential::new(model, rho_in);
    let n_el = model.n_el();
    let mut orbital_sets = Vec::with_capacity(fibers.len());
    for (basis, mask) in fibers.bases.iter().zip(&fibers.masks) {
        let slice = diagonalize_with_potential(&vtot, basis, mask, 0.0, n_el, n_el + 1, gap_tol)?;
        orbital_sets.push(slice.occupied(mask)?);
    }
    let rho_out = average_density(&orbital_sets, fibers.weight())?;
    Ok((orbital_sets, rho_out))
}

/// Aggregated per-iteration bound report (Brillouin-zone weighted).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundReport {
    pub variant: BoundVariant,
    /// Weighted fiber average of `η²` (equals `err_disc`).
    pub eta_sq: Option<f64>,
    /// Weighted fiber average of the per-fiber `μ_k` (unshifted frame).
    pub mu_lb: Option<f64>,
    pub err_disc: Option<f64>,
    pub err_scf: f64,
    /// Largest shift used across fibers.
    pub shift_used: f64,
    /// Largest operator-norm bound across fibers, when computed.
    pub opnorm_bound: Option<f64>,
    pub guaranteed: bool,
    pub note: Option<String>,
    /// Total seconds across fibers spent computing this variant.
    pub seconds: f64,
}

/// Bound results of one iterate, aggregated over fibers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterateBounds {
    pub err_scf: f64,
    pub reports: Vec<BoundReport>,
    /// Set when the certificate diagonalization failed (e.g. closed gap);
    /// `reports` is empty in that case.
    pub failure: Option<String>,
}

/// Weighted aggregation of per-fiber evaluations into one report row per
/// variant. A variant refused by any fiber is marked absent with the first
/// refusal note.
pub fn aggregate_fiber_bounds(
    evals: &[FiberEvaluation],
    weight: f64,
    variants: &[BoundVariant],
) -> IterateBounds {
    let err_scf = evals.iter().map(|e| weight * e.err_scf).sum();
    let mut reports = Vec::with_capacity(variants.len());
    for (vi, &variant) in variants.iter().enumerate() {
        let outcomes: Vec<&VariantOutcome> = evals.iter().map(|e| &e.outcomes[vi]).collect();
        debug_assert!(outcomes.iter().all(|o| o.variant == variant));
        let seconds = outcomes.iter().map(|o| o.seconds).sum();
        if let Some(r) = outcomes.iter().find(|o| o.err_disc.is_none()) {
            reports.push(BoundReport {
                variant,
                eta_sq: None,
                mu_lb: None,
                err_disc: None,
                err_scf,
                shift_used: r.shift_used,
                opnorm_bound: None,
                guaranteed: false,
                note: r.note.clone(),
                seconds,
            });
            continue;
        }
        let eta_sq = outcomes.iter().map(|o| weight * o.eta_sq.unwrap()).sum();
        let mu = outcomes.iter().map(|o| weight * o.mu_lb.unwrap()).sum();
        let err_disc = outcomes.iter().map(|o| weight * o.err_disc.unwrap()).sum();
        let shift = outcomes
            .iter()
            .map(|o| o.shift_used)
            .fold(f64::MIN, f64::max);
        let opnorms: Vec<f64> = outcomes.iter().filter_map(|o| o.opnorm_bound).collect();
        let opnorm = if opnorms.is_empty() {
            None
        } else {
            Some(opnorms.iter().fold(f64::MIN, |m, &q| m.max(q)))
        };
        reports.push(BoundReport {
            variant,
            eta_sq: Some(eta_sq),
            mu_lb: Some(mu),
            err_disc: Some(err_disc),
            err_scf,
            shift_used: shift,
            opnorm_bound: opnorm,
            guaranteed: outcomes.iter().all(|o| o.guaranteed),
            note: None,
            seconds,
        });
    }
    IterateBounds {
        err_scf,
        reports,
        failure: None,
    }
}

/// Snapshot of one SCF iterate.
pub struct IterationRecord {
    /// 1-based iterate index.
    pub m: usize,
    /// Occupied orbitals per fiber.
    pub orbitals: Vec<OrbitalSet>,
    /// Density of this iterate's state (not the mixed input density).
    pub density: PeriodicField,
    /// Energy per unit cell.
    pub energy: f64,
    /// `‖ρ_m − ρ_{m−1}‖_{L²}`; absent at the first iterate.
    pub density_residual: Option<f64>,
    pub bounds: Option<IterateBounds>,
}

/// Full capture of one SCF run.
pub struct ScfHistory {
    pub records: Vec<IterationRecord>,
    pub converged: bool,
    pub final_residual: f64,
}

impl ScfHistory {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn final_energy(&self) -> Option<f64> {
        self.records.last().map(|r| r.energy)
    }
}

fn initial_density(
    model: &ModelSpec,
    reference: &Arc<PlanewaveBasis>,
    guess: &InitialGuess,
) -> PeriodicField {
    match guess {
        InitialGuess::Constant => constant_density(reference, model.n_el()),
        InitialGuess::Random { seed } => {
            let carrier = density_basis(reference);
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let n = carrier.grid_len();
            // Positive grid profile, normalized to ∫ρ = N_el.
            let raw: Vec<f64> = (0..n).map(|_| 0.1 + rng.gen_range(0.0..1.0)).collect();
            let w = carrier.quadrature_weight();
            let total: f64 = raw.iter().sum::<f64>() * w;
            let scale = model.n_el() as f64 / total;
            let values: Vec<Complex64> = raw
                .iter()
                .map(|&r| Complex64::new(r * scale, 0.0))
                .collect();
            PeriodicField::from_grid(carrier, &values).expect("carrier grid")
        }
    }
}

const ANDERSON_CONDITION_LIMIT: f64 = 1e12;

struct Mixer {
    scheme: Mixing,
    /// Anderson history of (input density, residual) coefficient vectors.
    history: Vec<(Array1<f64>, Array1<f64>)>,
}

impl Mixer {
    fn new(scheme: Mixing) -> Self {
        Mixer {
            scheme,
            history: Vec::new(),
        }
    }

    fn next_input(&mut self, rho_in: &PeriodicField, rho_out: &PeriodicField) -> PeriodicField {
        match self.scheme {
            Mixing::Damped { beta } => {
                let step = rho_out.sub(rho_in).scaled(Complex64::new(beta, 0.0));
                rho_in.add(&step)
            }
            Mixing::Anderson { depth, beta } => {
                let x = field_to_real(rho_in);
                let f = field_to_real(&rho_out.sub(rho_in));
                self.history.push((x.clone(), f.clone()));
                if self.history.len() > depth + 1 {
                    self.history.remove(0);
                }
                let p = self.history.len() - 1;
                let mut next = &x + &(&f * beta);
                if p > 0 {
                    let n = x.len();
                    let mut dx = Array2::<f64>::zeros((n, p));
                    let mut df = Array2::<f64>::zeros((n, p));
                    for j in 0..p {
                        let dxj = &self.history[j + 1].0 - &self.history[j].0;
                        let dfj = &self.history[j + 1].1 - &self.history[j].1;
                        dx.column_mut(j).assign(&dxj);
                        df.column_mut(j).assign(&dfj);
                    }
                    let ls = df.least_squares(&f).expect("least squares");
                    let smax = ls.singular_values.iter().fold(0.0f64, |m, &v| m.max(v));
                    let smin = ls
                        .singular_values
                        .iter()
                        .fold(f64::INFINITY, |m, &v| m.min(v));
                    if !(smin > 0.0) || smax / smin > ANDERSON_CONDITION_LIMIT {
                        // Ill-conditioned difference history: restart.
                        self.history.clear();
                        self.history.push((x, f));
                    } else {
                        let gamma = ls.solution;
                        next = next - (&dx + &(&df * beta)).dot(&gamma);
                    }
                }
                real_to_field(rho_in, &next)
            }
        }
    }
}

fn field_to_real(f: &PeriodicField) -> Array1<f64> {
    let n = f.coeffs().len();
    let mut v = Array1::<f64>::zeros(2 * n);
    for (i, c) in f.coeffs().iter().enumerate() {
        v[2 * i] = c.re;
        v[2 * i + 1] = c.im;
    }
    v
}

fn real_to_field(like: &PeriodicField, v: &Array1<f64>) -> PeriodicField {
    let coeffs = (0..like.coeffs().len())
        .map(|i| Complex64::new(v[2 * i], v[2 * i + 1]))
        .collect();
    PeriodicField::new(like.basis().clone(), coeffs).expect("same basis")
}

/// Runs the SCF fixed point, recording every iterate. When `estimator` is
/// given, the bound hook runs after each iterate: it rebuilds the
/// Hamiltonian at the iterate's own density and certifies it; a closed gap
/// at the certificate step is recorded, not fatal.
pub fn run_scf(
    model: &ModelSpec,
    fibers: &FiberSetup,
    cfg: &ScfConfig,
    estimator: Option<&EstimatorConfig>,
) -> Result<ScfHistory> {
    cfg.validate()?;
    if fibers.is_empty() {
        return Err(Error::Model("no fibers to iterate".into()));
    }
    let reference = &fibers.bases[0];
    let mut rho_in = initial_density(model, reference, &cfg.initial_guess);
    let mut mixer = Mixer::new(cfg.mixing.clone());
    let gap_tol = estimator
        .map(|e| e.gap_tol)
        .unwrap_or(crate::linear_solver::DEFAULT_GAP_TOL);

    let mut records: Vec<IterationRecord> = Vec::new();
    let mut converged = false;
    let mut final_residual = f64::INFINITY;

    for m in 1..=cfg.max_iter {
        let (orbital_sets, rho_out) = scf_step(model, &rho_in, fibers, gap_tol)?;
        let energy = energy_per_cell(model, &orbital_sets, fibers.weight(), &rho_out);

        let bounds = estimator.map(|est_cfg| {
            let vtot_m = Arc::new(TotalPotential::new(model, &rho_out));
            let mut evals = Vec::with_capacity(fibers.len());
            for ((basis, mask), orbs) in fibers.bases.iter().zip(&fibers.masks).zip(&orbital_sets)
            {
                match evaluate_fiber(&vtot_m, basis, mask, orbs, model.convex(), est_cfg) {
                    Ok(eval) => evals.push(eval),
                    Err(e) => {
                        return IterateBounds {
                            err_scf: f64::NAN,
                            reports: Vec::new(),
                            failure: Some(e.to_string()),
                        }
                    }
                }
            }
            aggregate_fiber_bounds(&evals, fibers.weight(), &est_cfg.variants)
        });

        let density_residual = records
            .last()
            .map(|prev| rho_out.sub(&prev.density).norm_l2());
        records.push(IterationRecord {
            m,
            orbitals: orbital_sets,
            density: rho_out.clone(),
            energy,
            density_residual,
            bounds,
        });

        if let Some(r) = density_residual {
            final_residual = r;
            if r < cfg.density_tol {
                converged = true;
                break;
            }
        }
        rho_in = mixer.next_input(&rho_in, &rho_out);
    }

    Ok(ScfHistory {
        records,
        converged,
        final_residual,
    })
}
