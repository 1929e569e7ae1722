//! Python bindings: lattices, planewave bases, the random 1D potential and
//! the full reference/bounds pipeline driven by the same TOML configuration
//! the CLI uses.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use std::sync::Arc;

use pwcert::cli::{self, RunConfig};
use pwcert::model;
use pwcert::pw_basis;
use pwcert::scf::ScfHistory;

fn to_py_err(err: pwcert::Error) -> PyErr {
    match err {
        pwcert::Error::Config(_) | pwcert::Error::Lattice(_) | pwcert::Error::Basis(_) => {
            PyValueError::new_err(err.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// A periodic lattice (lengths in Bohr).
#[pyclass(frozen)]
struct Lattice {
    inner: pw_basis::Lattice,
}

#[pymethods]
impl Lattice {
    /// `cell[j]` is the j-th lattice vector.
    #[new]
    fn new(cell: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(Lattice {
            inner: pw_basis::Lattice::new(&cell).map_err(to_py_err)?,
        })
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn volume(&self) -> f64 {
        self.inner.volume()
    }

    fn __repr__(&self) -> String {
        format!(
            "Lattice(dimension={}, volume={})",
            self.inner.dim(),
            self.inner.volume()
        )
    }
}

/// Planewave sphere `½|G + k|² ≤ ecut` with its FFT grid.
#[pyclass(frozen)]
struct Basis {
    inner: Arc<pw_basis::PlanewaveBasis>,
}

#[pymethods]
impl Basis {
    #[new]
    #[pyo3(signature = (lattice, ecut, kshift=None))]
    fn new(lattice: &Lattice, ecut: f64, kshift: Option<Vec<f64>>) -> PyResult<Self> {
        let k = kshift.unwrap_or_default();
        Ok(Basis {
            inner: pw_basis::build_basis(&lattice.inner, ecut, &k).map_err(to_py_err)?,
        })
    }

    #[getter]
    fn ecut(&self) -> f64 {
        self.inner.ecut()
    }

    #[getter]
    fn num_planewaves(&self) -> usize {
        self.inner.num_planewaves()
    }

    #[getter]
    fn grid_shape(&self) -> (usize, usize, usize) {
        let s = self.inner.grid_shape();
        (s[0], s[1], s[2])
    }

    /// Integer Fourier indices in basis order (lexicographic).
    fn gvectors(&self) -> Vec<(i64, i64, i64)> {
        self.inner
            .gvectors()
            .iter()
            .map(|n| (n[0], n[1], n[2]))
            .collect()
    }

    /// `½|G + k|²` per retained planewave (Hartree).
    fn kinetic_energies(&self) -> Vec<f64> {
        self.inner.kinetic_energies().to_vec()
    }

    /// `H^s` norm of a coefficient vector given as `(re, im)` pairs.
    fn sobolev_norm(&self, coeffs: Vec<(f64, f64)>, s: f64) -> PyResult<f64> {
        let c = coeffs
            .into_iter()
            .map(|(re, im)| num_complex::Complex64::new(re, im))
            .collect();
        let field = pw_basis::PeriodicField::new(self.inner.clone(), c).map_err(to_py_err)?;
        Ok(field.sobolev_norm(s))
    }

    fn __repr__(&self) -> String {
        format!(
            "Basis(ecut={}, num_planewaves={})",
            self.inner.ecut(),
            self.inner.num_planewaves()
        )
    }
}

/// Fourier coefficients of the seeded random 1D potential on `basis`, as
/// `(n, re, im)` rows in basis order.
#[pyfunction]
#[pyo3(signature = (basis, seed, amplitude=10.0, decay=1.1, mode_cutoff=100.0))]
fn potential_coefficients(
    basis: &Basis,
    seed: u64,
    amplitude: f64,
    decay: f64,
    mode_cutoff: f64,
) -> PyResult<Vec<(i64, f64, f64)>> {
    let pot = model::random_potential_1d(&basis.inner, seed, amplitude, decay, mode_cutoff)
        .map_err(to_py_err)?;
    Ok(basis
        .inner
        .gvectors()
        .iter()
        .zip(pot.field().coeffs())
        .map(|(n, c)| (n[0], c.re, c.im))
        .collect())
}

fn history_rows<'py>(
    py: Python<'py>,
    history: &ScfHistory,
    reference_energy: f64,
) -> PyResult<Bound<'py, PyList>> {
    let rows = PyList::empty(py);
    for rec in &history.records {
        let row = PyDict::new(py);
        row.set_item("m", rec.m)?;
        row.set_item("energy", rec.energy)?;
        row.set_item("true_error", rec.energy - reference_energy)?;
        if let Some(bounds) = &rec.bounds {
            if bounds.failure.is_none() {
                row.set_item("err_scf", bounds.err_scf)?;
            } else {
                row.set_item("failure", bounds.failure.clone())?;
            }
            let disc = PyDict::new(py);
            let shift = PyDict::new(py);
            let guaranteed = PyDict::new(py);
            for rep in &bounds.reports {
                disc.set_item(rep.variant.label(), rep.err_disc)?;
                shift.set_item(rep.variant.label(), rep.shift_used)?;
                guaranteed.set_item(rep.variant.label(), rep.guaranteed)?;
            }
            row.set_item("err_disc", disc)?;
            row.set_item("shift", shift)?;
            row.set_item("guaranteed", guaranteed)?;
        }
        rows.append(row)?;
    }
    Ok(rows)
}

/// A full run specification (same TOML the command line takes).
#[pyclass(frozen)]
struct RunSpec {
    config: RunConfig,
}

#[pymethods]
impl RunSpec {
    #[new]
    fn new(toml_text: &str) -> PyResult<Self> {
        Ok(RunSpec {
            config: RunConfig::from_toml(toml_text).map_err(to_py_err)?,
        })
    }

    #[getter]
    fn reference_digest(&self) -> String {
        self.config.reference_digest()
    }

    /// Computes (or loads) the reference solution; returns a dict with the
    /// energy, iteration count and artifact path.
    fn reference<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let mut log = Vec::new();
        let solution = cli::cmd_reference(&self.config, &mut log).map_err(to_py_err)?;
        let out = PyDict::new(py);
        out.set_item("energy", solution.energy)?;
        out.set_item("iterations", solution.iterations)?;
        out.set_item("digest", solution.digest)?;
        out.set_item(
            "path",
            self.config.reference_artifact_path().display().to_string(),
        )?;
        Ok(out)
    }

    /// Runs the bounded SCF (computing the reference first if it is not
    /// cached) and returns per-iteration rows plus the run summary. The
    /// same trace.csv / summary.json files the CLI produces are written to
    /// the configured output directory.
    fn bounds<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let mut log = Vec::new();
        let reference = cli::cmd_reference(&self.config, &mut log).map_err(to_py_err)?;

        let built = self.config.build().map_err(to_py_err)?;
        let est = self.config.estimator_config();
        let history = pwcert::scf::run_scf(
            &built.model,
            &built.computational,
            &self.config.scf_config().map_err(to_py_err)?,
            Some(&est),
        )
        .map_err(to_py_err)?;

        let trace_path = self.config.output.dir.join("trace.csv");
        let summary_path = self.config.output.dir.join("summary.json");
        cli::trace::write_trace(&trace_path, &history, &est.variants, reference.energy)
            .map_err(to_py_err)?;
        let summary = cli::summarize(
            &self.config.reference_digest(),
            &history,
            &est.variants,
            reference.energy,
        );
        cli::trace::write_summary(&summary_path, &summary).map_err(to_py_err)?;

        let out = PyDict::new(py);
        out.set_item("reference_energy", reference.energy)?;
        out.set_item("converged", history.converged)?;
        out.set_item("rows", history_rows(py, &history, reference.energy)?)?;
        out.set_item("trace_path", trace_path.display().to_string())?;
        out.set_item(
            "summary_json",
            serde_json::to_string(&summary).map_err(|e| PyRuntimeError::new_err(e.to_string()))?,
        )?;
        Ok(out)
    }

    fn __repr__(&self) -> String {
        format!(
            "RunSpec(n_el={}, functional='{}', ecut={}, ecut_ref={})",
            self.config.model.n_el,
            self.config.model.functional,
            self.config.discretization.ecut,
            self.config.discretization.ecut_ref
        )
    }
}

#[pymodule]
fn pwcert_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Lattice>()?;
    m.add_class::<Basis>()?;
    m.add_class::<RunSpec>()?;
    m.add_function(wrap_pyfunction!(potential_coefficients, m)?)?;
    Ok(())
}
