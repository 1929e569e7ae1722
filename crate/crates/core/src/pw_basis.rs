//! Periodic lattice geometry, planewave bases with an energy cutoff, and
//! FFT-backed dual (Fourier ↔ real grid) representations of periodic fields.
//!
//! All Fourier coefficients refer to the orthonormal planewaves
//! `e_G(x) = |Ω|^{-1/2} exp(i G·x)`, so the L² norm of a field equals the
//! Euclidean norm of its coefficient vector. Grids are sized so that the
//! pointwise product of any two basis fields is exactly representable
//! (each dimension at least `4·N_max + 1` points), which keeps densities and
//! potential-times-orbital products alias-free.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Determinant and inverse of a small (d ≤ 3) matrix given as `m[row][col]`.
fn invert_small(m: &[[f64; 3]; 3], d: usize) -> Option<([[f64; 3]; 3], f64)> {
    let det = match d {
        1 => m[0][0],
        2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
        3 => {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        }
        _ => return None,
    };
    if det.abs() < 1e-12 {
        return None;
    }
    let mut inv = [[0.0; 3]; 3];
    match d {
        1 => inv[0][0] = 1.0 / det,
        2 => {
            inv[0][0] = m[1][1] / det;
            inv[0][1] = -m[0][1] / det;
            inv[1][0] = -m[1][0] / det;
            inv[1][1] = m[0][0] / det;
        }
        3 => {
            for i in 0..3 {
                for j in 0..3 {
                    let (a, b) = ((i + 1) % 3, (i + 2) % 3);
                    let (c, e) = ((j + 1) % 3, (j + 2) % 3);
                    // Cofactor transpose: entry (j, i) of the adjugate.
                    inv[j][i] = (m[a][c] * m[b][e] - m[a][e] * m[b][c]) / det;
                }
            }
        }
        _ => unreachable!(),
    }
    Some((inv, det))
}

/// A periodic lattice in 1, 2 or 3 dimensions. Lengths in Bohr.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    dim: usize,
    /// Lattice vectors, `cell[j]` is the j-th vector padded to 3 components.
    cell: Vec<[f64; 3]>,
    /// Reciprocal vectors `b_j`, satisfying `b_j · a_i = 2π δ_ij`.
    recip: Vec<[f64; 3]>,
    volume: f64,
}

impl Lattice {
    /// Builds a lattice from its vectors (`vectors[j]` has `dim` components).
    pub fn new(vectors: &[Vec<f64>]) -> Result<Self> {
        let dim = vectors.len();
        if !(1..=3).contains(&dim) {
            return Err(Error::Lattice(format!("dimension {dim} not in 1..=3")));
        }
        for v in vectors {
            if v.len() != dim {
                return Err(Error::Lattice(format!(
                    "lattice vector has {} components, expected {dim}",
                    v.len()
                )));
            }
        }
        // Columns of `a` are the lattice vectors.
        let mut a = [[0.0; 3]; 3];
        for i in 0..dim {
            for j in 0..dim {
                a[i][j] = vectors[j][i];
            }
        }
        let (inv, det) = invert_small(&a, dim)
            .ok_or_else(|| Error::Lattice("singular cell".into()))?;
        // b_j = 2π (A^{-T}) e_j, i.e. row j of A^{-1} scaled by 2π.
        let mut cell = vec![[0.0; 3]; dim];
        let mut recip = vec![[0.0; 3]; dim];
        for j in 0..dim {
            for i in 0..dim {
                cell[j][i] = vectors[j][i];
                recip[j][i] = 2.0 * std::f64::consts::PI * inv[j][i];
            }
        }
        Ok(Lattice {
            dim,
            cell,
            recip,
            volume: det.abs(),
        })
    }

    /// 1D cell `(0, a)`.
    pub fn line(a: f64) -> Result<Self> {
        Self::new(&[vec![a]])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    pub fn cell_vectors(&self) -> &[[f64; 3]] {
        &self.cell
    }

    pub fn reciprocal_vectors(&self) -> &[[f64; 3]] {
        &self.recip
    }

    /// Cartesian reciprocal vector for integer indices `n`.
    pub fn g_cartesian(&self, n: &[i64; 3]) -> [f64; 3] {
        let mut g = [0.0; 3];
        for j in 0..self.dim {
            for i in 0..3 {
                g[i] += n[j] as f64 * self.recip[j][i];
            }
        }
        g
    }

    /// Cartesian vector from fractional reciprocal coordinates.
    pub fn k_cartesian(&self, frac: &[f64]) -> [f64; 3] {
        let mut k = [0.0; 3];
        for j in 0..self.dim {
            for i in 0..3 {
                k[i] += frac[j] * self.recip[j][i];
            }
        }
        k
    }
}

fn norm3(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Smallest 5-smooth integer ≥ `n`; FFT sizes with only factors 2, 3, 5.
pub fn next_fast_fft_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// FFT plans for one real-space grid. Transforms are unnormalized
/// (forward uses `e^{-iG·x}`, inverse `e^{+iG·x}`).
pub struct GridFft {
    shape: [usize; 3],
    len: usize,
    fwd: Vec<Arc<dyn Fft<f64>>>,
    inv: Vec<Arc<dyn Fft<f64>>>,
}

impl std::fmt::Debug for GridFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GridFft").field("shape", &self.shape).finish()
    }
}

impl GridFft {
    pub fn new(shape: [usize; 3]) -> Arc<Self> {
        let mut planner = FftPlanner::new();
        let fwd = shape
            .iter()
            .map(|&n| planner.plan_fft_forward(n))
            .collect();
        let inv = shape
            .iter()
            .map(|&n| planner.plan_fft_inverse(n))
            .collect();
        Arc::new(GridFft {
            shape,
            len: shape.iter().product(),
            fwd,
            inv,
        })
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, true);
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, false);
    }

    fn transform(&self, data: &mut [Complex64], forward: bool) {
        assert_eq!(data.len(), self.len, "grid buffer length mismatch");
        let mut scratch: Vec<Complex64> = Vec::new();
        for axis in 0..3 {
            let n = self.shape[axis];
            if n == 1 {
                continue;
            }
            let plan = if forward { &self.fwd[axis] } else { &self.inv[axis] };
            let pre: usize = self.shape[..axis].iter().product();
            let post: usize = self.shape[axis + 1..].iter().product();
            if post == 1 {
                // Lanes along the last nontrivial axis are contiguous.
                plan.process(data);
                continue;
            }
            scratch.resize(n, Complex64::default());
            for p in 0..pre {
                for q in 0..post {
                    let base = p * n * post + q;
                    for t in 0..n {
                        scratch[t] = data[base + t * post];
                    }
                    plan.process(&mut scratch);
                    for t in 0..n {
                        data[base + t * post] = scratch[t];
                    }
                }
            }
        }
    }
}

/// Planewave basis `{e_G : ½|G + k|² ≤ E_cut}` over a lattice, together with
/// the FFT grid its fields are evaluated on.
///
/// G-vectors are stored in lexicographic order of their integer indices;
/// this order is part of the on-disk contract for reproducible outputs.
pub struct PlanewaveBasis {
    lattice: Lattice,
    ecut: f64,
    kshift: [f64; 3],
    gvectors: Vec<[i64; 3]>,
    gcart: Vec<[f64; 3]>,
    /// `½|G + k|²` per retained planewave.
    kinetic: Vec<f64>,
    index_of: HashMap<[i64; 3], usize>,
    grid: Arc<GridFft>,
}

impl std::fmt::Debug for PlanewaveBasis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PlanewaveBasis")
            .field("dim", &self.lattice.dim)
            .field("ecut", &self.ecut)
            .field("kshift", &self.kshift)
            .field("num_planewaves", &self.gvectors.len())
            .field("grid_shape", &self.grid.shape())
            .finish()
    }
}

/// Builds the basis with cutoff `ecut` (Hartree) and reciprocal shift
/// `kshift` (Cartesian, may be shorter than 3 components).
pub fn build_basis(lattice: &Lattice, ecut: f64, kshift: &[f64]) -> Result<Arc<PlanewaveBasis>> {
    build_basis_sized(lattice, ecut, kshift, None)
}

/// As [`build_basis`], with an explicit FFT grid shape. The shape must be at
/// least the alias-free minimum in every dimension; this is how Bloch fibers
/// with different shifts share one grid.
pub fn build_basis_sized(
    lattice: &Lattice,
    ecut: f64,
    kshift: &[f64],
    grid_shape: Option<[usize; 3]>,
) -> Result<Arc<PlanewaveBasis>> {
    if !(ecut > 0.0) {
        return Err(Error::Basis(format!("ecut must be positive, got {ecut}")));
    }
    if kshift.len() > 3 {
        return Err(Error::Basis("kshift has more than 3 components".into()));
    }
    let mut k = [0.0; 3];
    k[..kshift.len()].copy_from_slice(kshift);

    let dim = lattice.dim;
    let radius = (2.0 * ecut).sqrt();
    let knorm = norm3(&k);
    // |n_j| ≤ |a_j| (|G| + |k|) / 2π since n = B^{-1} G and row j of B^{-1}
    // is a_j / 2π.
    let mut bounds = [0i64; 3];
    for j in 0..dim {
        let aj = norm3(&lattice.cell[j]);
        bounds[j] = (aj * (radius + knorm) / (2.0 * std::f64::consts::PI)).floor() as i64 + 1;
    }

    let mut gvectors = Vec::new();
    let mut gcart = Vec::new();
    let mut kinetic = Vec::new();
    let mut nmax = [0i64; 3];
    for n0 in -bounds[0]..=bounds[0] {
        for n1 in -bounds[1]..=bounds[1] {
            for n2 in -bounds[2]..=bounds[2] {
                let n = [n0, n1, n2];
                let g = lattice.g_cartesian(&n);
                let gk = [g[0] + k[0], g[1] + k[1], g[2] + k[2]];
                let kin = 0.5 * (gk[0] * gk[0] + gk[1] * gk[1] + gk[2] * gk[2]);
                if kin <= ecut {
                    for j in 0..3 {
                        nmax[j] = nmax[j].max(n[j].abs());
                    }
                    gvectors.push(n);
                    gcart.push(g);
                    kinetic.push(kin);
                }
            }
        }
    }
    if gvectors.is_empty() {
        return Err(Error::Basis("no planewave satisfies the cutoff".into()));
    }

    let mut min_shape = [1usize; 3];
    for j in 0..dim {
        min_shape[j] = next_fast_fft_size(4 * nmax[j] as usize + 1);
    }
    let shape = match grid_shape {
        Some(s) => {
            for j in 0..3 {
                if s[j] < min_shape[j] {
                    return Err(Error::Basis(format!(
                        "grid dimension {j} = {} below alias-free minimum {}",
                        s[j], min_shape[j]
                    )));
                }
            }
            s
        }
        None => min_shape,
    };

    let index_of = gvectors
        .iter()
        .enumerate()
        .map(|(i, n)| (*n, i))
        .collect();

    Ok(Arc::new(PlanewaveBasis {
        lattice: lattice.clone(),
        ecut,
        kshift: k,
        gvectors,
        gcart,
        kinetic,
        index_of,
        grid: GridFft::new(shape),
    }))
}

/// Carrier basis for densities and other quadratic quantities of
/// `reference`: the `4·E_cut` sphere at `k = 0` (every pairwise sum
/// `G₁ + G₂` of reference vectors lands inside), clipped to the frequencies
/// the reference grid represents without aliasing, and sharing that grid.
pub fn density_basis(reference: &Arc<PlanewaveBasis>) -> Arc<PlanewaveBasis> {
    let lattice = reference.lattice().clone();
    let ecut = 4.0 * reference.ecut();
    let shape = reference.grid_shape();
    let dim = lattice.dim();

    let mut bounds = [0i64; 3];
    for j in 0..dim {
        bounds[j] = ((shape[j] - 1) / 2) as i64;
    }
    let mut gvectors = Vec::new();
    let mut gcart = Vec::new();
    let mut kinetic = Vec::new();
    for n0 in -bounds[0]..=bounds[0] {
        for n1 in -bounds[1]..=bounds[1] {
            for n2 in -bounds[2]..=bounds[2] {
                let n = [n0, n1, n2];
                let g = lattice.g_cartesian(&n);
                let kin = 0.5 * (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
                if kin <= ecut {
                    gvectors.push(n);
                    gcart.push(g);
                    kinetic.push(kin);
                }
            }
        }
    }
    let index_of = gvectors
        .iter()
        .enumerate()
        .map(|(i, n)| (*n, i))
        .collect();
    Arc::new(PlanewaveBasis {
        lattice,
        ecut,
        kshift: [0.0; 3],
        gvectors,
        gcart,
        kinetic,
        index_of,
        grid: reference.grid.clone(),
    })
}

impl PlanewaveBasis {
    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn ecut(&self) -> f64 {
        self.ecut
    }

    pub fn kshift(&self) -> &[f64; 3] {
        &self.kshift
    }

    pub fn num_planewaves(&self) -> usize {
        self.gvectors.len()
    }

    pub fn gvectors(&self) -> &[[i64; 3]] {
        &self.gvectors
    }

    pub fn g_cartesian(&self, i: usize) -> &[f64; 3] {
        &self.gcart[i]
    }

    /// `½|G + k|²` for every retained planewave, in basis order.
    pub fn kinetic_energies(&self) -> &[f64] {
        &self.kinetic
    }

    pub fn grid(&self) -> &Arc<GridFft> {
        &self.grid
    }

    pub fn grid_shape(&self) -> [usize; 3] {
        self.grid.shape()
    }

    pub fn grid_len(&self) -> usize {
        self.grid.len()
    }

    /// Quadrature weight `|Ω| / N_grid` of one grid point.
    pub fn quadrature_weight(&self) -> f64 {
        self.lattice.volume / self.grid.len() as f64
    }

    pub fn index_of(&self, n: &[i64; 3]) -> Option<usize> {
        self.index_of.get(n).copied()
    }

    /// Two bases describe the same sphere family (fields may be projected
    /// between them) iff lattice and k-shift agree.
    pub fn compatible(&self, other: &PlanewaveBasis) -> bool {
        self.lattice == other.lattice && self.kshift == other.kshift
    }

    /// Identical sphere: compatible and same cutoff set.
    pub fn same_sphere(&self, other: &PlanewaveBasis) -> bool {
        self.compatible(other) && self.gvectors.len() == other.gvectors.len()
    }

    /// Flat grid index of integer frequency `n` (wrapped periodically).
    pub fn grid_index(&self, n: &[i64; 3]) -> usize {
        let s = self.grid.shape();
        let mut idx = 0usize;
        for j in 0..3 {
            let m = s[j] as i64;
            let w = ((n[j] % m) + m) % m;
            idx = idx * s[j] + w as usize;
        }
        idx
    }

    /// Sub-sphere of this basis: positions of all G with `½|G+k|² ≤ ecut`.
    pub fn mask(&self, ecut: f64) -> Result<SphereMask> {
        if !(ecut > 0.0) {
            return Err(Error::Basis(format!("mask ecut must be positive, got {ecut}")));
        }
        if ecut > self.ecut {
            return Err(Error::Basis(format!(
                "mask ecut {ecut} exceeds basis ecut {}",
                self.ecut
            )));
        }
        let mut indices = Vec::new();
        let mut in_mask = vec![false; self.gvectors.len()];
        for (i, &kin) in self.kinetic.iter().enumerate() {
            if kin <= ecut {
                indices.push(i);
                in_mask[i] = true;
            }
        }
        Ok(SphereMask {
            ecut,
            indices,
            in_mask,
        })
    }

    /// Mask covering the whole basis.
    pub fn full_mask(&self) -> SphereMask {
        SphereMask {
            ecut: self.ecut,
            indices: (0..self.gvectors.len()).collect(),
            in_mask: vec![true; self.gvectors.len()],
        }
    }

    /// Full-grid Fourier coefficients (`e_G` convention, every grid
    /// frequency) of sampled values. Exact for grid-band-limited fields.
    pub fn fourier_on_grid(&self, values: &[Complex64]) -> Vec<Complex64> {
        let mut data = values.to_vec();
        self.grid.forward(&mut data);
        let scale = self.lattice.volume.sqrt() / self.grid.len() as f64;
        for v in &mut data {
            *v *= scale;
        }
        data
    }
}

/// Fourier mask selecting the computational sphere `V_N` inside a larger
/// (reference) basis.
#[derive(Debug, Clone)]
pub struct SphereMask {
    ecut: f64,
    indices: Vec<usize>,
    in_mask: Vec<bool>,
}

impl SphereMask {
    pub fn ecut(&self) -> f64 {
        self.ecut
    }

    /// Positions in the parent basis, ascending (hence lexicographic in G).
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, parent_index: usize) -> bool {
        self.in_mask[parent_index]
    }

    pub fn parent_len(&self) -> usize {
        self.in_mask.len()
    }
}

/// A periodic function in dual representation: Fourier coefficients over its
/// basis sphere, with lazily cached values on the FFT grid.
///
/// For a basis with shift k the stored function is the cell-periodic part
/// (coefficients of `e_G`); kinetic terms account for the shift separately.
#[derive(Debug)]
pub struct PeriodicField {
    basis: Arc<PlanewaveBasis>,
    coeffs: Vec<Complex64>,
    real_cache: OnceLock<Vec<Complex64>>,
}

impl Clone for PeriodicField {
    fn clone(&self) -> Self {
        PeriodicField {
            basis: self.basis.clone(),
            coeffs: self.coeffs.clone(),
            real_cache: self.real_cache.clone(),
        }
    }
}

impl PeriodicField {
    pub fn new(basis: Arc<PlanewaveBasis>, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != basis.num_planewaves() {
            return Err(Error::Basis(format!(
                "coefficient count {} does not match basis size {}",
                coeffs.len(),
                basis.num_planewaves()
            )));
        }
        Ok(PeriodicField {
            basis,
            coeffs,
            real_cache: OnceLock::new(),
        })
    }

    pub fn zero(basis: Arc<PlanewaveBasis>) -> Self {
        let n = basis.num_planewaves();
        PeriodicField {
            basis,
            coeffs: vec![Complex64::default(); n],
            real_cache: OnceLock::new(),
        }
    }

    /// The basis function `e_G` for integer indices `n`.
    pub fn mode(basis: Arc<PlanewaveBasis>, n: &[i64; 3]) -> Result<Self> {
        let i = basis
            .index_of(n)
            .ok_or_else(|| Error::Basis(format!("mode {n:?} not in basis")))?;
        let mut f = Self::zero(basis);
        f.coeffs[i] = Complex64::new(1.0, 0.0);
        Ok(f)
    }

    pub fn basis(&self) -> &Arc<PlanewaveBasis> {
        &self.basis
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// Values on the FFT grid (cached). `f(x_j) = |Ω|^{-1/2} Σ_G ĉ_G e^{iG·x_j}`.
    pub fn real_values(&self) -> &[Complex64] {
        self.real_cache.get_or_init(|| {
            let grid = self.basis.grid();
            let mut data = vec![Complex64::default(); grid.len()];
            for (i, n) in self.basis.gvectors().iter().enumerate() {
                data[self.basis.grid_index(n)] = self.coeffs[i];
            }
            grid.inverse(&mut data);
            let scale = 1.0 / self.basis.lattice().volume().sqrt();
            for v in &mut data {
                *v *= scale;
            }
            data
        })
    }

    /// Recovers a field from grid samples; inverse of [`Self::real_values`]
    /// for band-limited data, otherwise the alias-free truncation onto the
    /// basis sphere.
    pub fn from_grid(basis: Arc<PlanewaveBasis>, values: &[Complex64]) -> Result<Self> {
        if values.len() != basis.grid_len() {
            return Err(Error::Basis(format!(
                "grid value count {} does not match grid size {}",
                values.len(),
                basis.grid_len()
            )));
        }
        let full = basis.fourier_on_grid(values);
        let coeffs = basis
            .gvectors()
            .iter()
            .map(|n| full[basis.grid_index(n)])
            .collect();
        Ok(PeriodicField {
            basis,
            coeffs,
            real_cache: OnceLock::new(),
        })
    }

    /// L² inner product `⟨self, other⟩ = Σ_G conj(self_G) other_G`.
    pub fn inner(&self, other: &PeriodicField) -> Complex64 {
        assert!(
            self.basis.same_sphere(&other.basis),
            "inner product requires identical bases"
        );
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn norm_l2(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `H^s` norm `(Σ_G (1 + |G|²/2)^s |ĉ_G|²)^{1/2}`.
    pub fn sobolev_norm(&self, s: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let g = self.basis.g_cartesian(i);
                let g2 = g[0] * g[0] + g[1] * g[1] + g[2] * g[2];
                (1.0 + 0.5 * g2).powf(s) * c.norm_sqr()
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Orthogonal projection onto `target`: shared G-coefficients are
    /// copied, the rest dropped or zeroed.
    pub fn project(&self, target: &Arc<PlanewaveBasis>) -> Result<PeriodicField> {
        if !self.basis.compatible(target) {
            return Err(Error::Incompatible(
                "projection requires same lattice and k-shift".into(),
            ));
        }
        let mut out = PeriodicField::zero(target.clone());
        for (i, n) in self.basis.gvectors().iter().enumerate() {
            if let Some(j) = target.index_of(n) {
                out.coeffs[j] = self.coeffs[i];
            }
        }
        Ok(out)
    }

    /// Zeroes every coefficient outside `mask`, in place semantics via a new
    /// field (fields are immutable).
    pub fn restricted_to(&self, mask: &SphereMask) -> PeriodicField {
        let mut coeffs = vec![Complex64::default(); self.coeffs.len()];
        for &i in mask.indices() {
            coeffs[i] = self.coeffs[i];
        }
        PeriodicField {
            basis: self.basis.clone(),
            coeffs,
            real_cache: OnceLock::new(),
        }
    }

    /// The complement of [`Self::restricted_to`]: zeroes every coefficient
    /// inside `mask`, keeping the `V_N^⊥` part.
    pub fn perp_component(&self, mask: &SphereMask) -> PeriodicField {
        let mut coeffs = self.coeffs.clone();
        for &i in mask.indices() {
            coeffs[i] = Complex64::default();
        }
        PeriodicField {
            basis: self.basis.clone(),
            coeffs,
            real_cache: OnceLock::new(),
        }
    }

    /// Max deviation from the Hermitian symmetry `ĉ_{-G} = conj(ĉ_G)` of a
    /// real-valued field. Requires a symmetric sphere (k = 0).
    pub fn hermitian_symmetry_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, n) in self.basis.gvectors().iter().enumerate() {
            let m = [-n[0], -n[1], -n[2]];
            match self.basis.index_of(&m) {
                Some(j) => {
                    let d = (self.coeffs[i].conj() - self.coeffs[j]).norm();
                    worst = worst.max(d);
                }
                None => return f64::INFINITY,
            }
        }
        worst
    }

    pub fn scaled(&self, a: Complex64) -> PeriodicField {
        let coeffs = self.coeffs.iter().map(|c| c * a).collect();
        PeriodicField {
            basis: self.basis.clone(),
            coeffs,
            real_cache: OnceLock::new(),
        }
    }

    pub fn add(&self, other: &PeriodicField) -> PeriodicField {
        assert!(self.basis.same_sphere(&other.basis));
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a + b)
            .collect();
        PeriodicField {
            basis: self.basis.clone(),
            coeffs,
            real_cache: OnceLock::new(),
        }
    }

    pub fn sub(&self, other: &PeriodicField) -> PeriodicField {
        assert!(self.basis.same_sphere(&other.basis));
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a - b)
            .collect();
        PeriodicField {
            basis: self.basis.clone(),
            coeffs,
            real_cache: OnceLock::new(),
        }
    }
}
