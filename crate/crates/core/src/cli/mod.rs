//! Batch front door: configuration files, the reference/bounds/sweep
//! commands, reference-solution caching, and plot-ready trace files.

pub mod artifact;
pub mod config;
pub mod trace;

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::scf::{run_scf, ScfHistory};

pub use artifact::ReferenceSolution;
pub use config::{BuiltProblem, RunConfig};
pub use trace::{summarize, RunSummary};

/// Exit code classification for the command-line front end.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Lattice(_) => 2,
        Error::NonConvergence { .. } => 3,
        Error::MissingReference(_) => 4,
        _ => 1,
    }
}

/// Outcome of a bounded run: where the trace and summary were written.
#[derive(Debug)]
pub struct BoundsOutput {
    pub trace_path: PathBuf,
    pub summary_path: PathBuf,
    pub converged: bool,
}

/// Computes (or loads from cache) the reference solution: an SCF run in the
/// full reference basis at one decade below the run tolerance, persisted as
/// a versioned artifact keyed by the config digest.
pub fn cmd_reference(cfg: &RunConfig, log: &mut dyn Write) -> Result<ReferenceSolution> {
    let digest = cfg.reference_digest();
    let path = cfg.reference_artifact_path();
    if path.exists() {
        if let Ok(found) = ReferenceSolution::load_checked(&path, &digest) {
            writeln!(log, "reference: cache hit {}", path.display())?;
            return Ok(found);
        }
    }
    let built = cfg.build()?;
    let scf = cfg.reference_scf_config()?;
    writeln!(
        log,
        "reference: solving in the reference basis ({} planewaves, {} fiber(s), tol {:.1e})",
        built.reference.masks[0].len(),
        built.reference.len(),
        scf.density_tol
    )?;
    let history = run_scf(&built.model, &built.reference, &scf, None)?;
    if !history.converged {
        return Err(Error::NonConvergence {
            max_iter: scf.max_iter,
            residual: history.final_residual,
        });
    }
    let solution = ReferenceSolution::from_history(digest, &history, built.model.n_el())?;
    solution.save(&path)?;
    writeln!(
        log,
        "reference: E = {:.12} Ha after {} iterations, saved {}",
        solution.energy,
        solution.iterations,
        path.display()
    )?;
    Ok(solution)
}

/// Runs the bounded SCF against an existing reference artifact and writes
/// the per-iteration CSV trace plus the JSON summary.
pub fn cmd_bounds(cfg: &RunConfig, log: &mut dyn Write) -> Result<BoundsOutput> {
    let digest = cfg.reference_digest();
    let path = cfg.reference_artifact_path();
    if !path.exists() {
        return Err(Error::MissingReference(format!(
            "{} (run the reference command first)",
            path.display()
        )));
    }
    let reference = ReferenceSolution::load_checked(&path, &digest)?;
    let (output, _) = run_bounds_against(cfg, &reference, &cfg.output.dir, None, log)?;
    Ok(output)
}

/// Bounded run with an explicit output directory and optional cutoff
/// override (shared by `bounds` and `sweep`).
fn run_bounds_against(
    cfg: &RunConfig,
    reference: &ReferenceSolution,
    out_dir: &Path,
    ecut_override: Option<f64>,
    log: &mut dyn Write,
) -> Result<(BoundsOutput, ScfHistory)> {
    let mut effective = cfg.clone();
    if let Some(ecut) = ecut_override {
        effective.discretization.ecut = ecut;
    }
    let built = effective.build()?;
    let scf = effective.scf_config()?;
    let est = effective.estimator_config();
    writeln!(
        log,
        "bounds: E_cut = {} Ha ({} planewaves), E_ref = {:.12} Ha",
        effective.discretization.ecut,
        built.computational.masks[0].len(),
        reference.energy
    )?;
    let history = run_scf(&built.model, &built.computational, &scf, Some(&est))?;

    std::fs::create_dir_all(out_dir)?;
    let trace_path = out_dir.join("trace.csv");
    let summary_path = out_dir.join("summary.json");
    trace::write_trace(&trace_path, &history, &est.variants, reference.energy)?;
    let summary = summarize(&effective.reference_digest(), &history, &est.variants, reference.energy);
    trace::write_summary(&summary_path, &summary)?;
    writeln!(
        log,
        "bounds: {} iterations, converged = {}, trace {}",
        history.iterations(),
        history.converged,
        trace_path.display()
    )?;
    let output = BoundsOutput {
        trace_path,
        summary_path,
        converged: history.converged,
    };
    Ok((output, history))
}

/// One bounded run per cutoff plus an aggregated CSV of the converged
/// discretization errors versus the cutoff.
pub fn cmd_sweep(cfg: &RunConfig, ecuts: &[f64], log: &mut dyn Write) -> Result<PathBuf> {
    if ecuts.is_empty() {
        return Err(Error::Config("sweep needs at least one cutoff".into()));
    }
    for &e in ecuts {
        if !(e > 0.0) || e > cfg.discretization.ecut_ref {
            return Err(Error::Config(format!(
                "sweep cutoff {e} outside (0, ecut_ref]"
            )));
        }
    }
    let digest = cfg.reference_digest();
    let path = cfg.reference_artifact_path();
    if !path.exists() {
        return Err(Error::MissingReference(format!(
            "{} (run the reference command first)",
            path.display()
        )));
    }
    let reference = ReferenceSolution::load_checked(&path, &digest)?;

    let est = cfg.estimator_config();
    let mut rows: Vec<(f64, ScfHistory)> = Vec::new();
    for &ecut in ecuts {
        let out_dir = cfg.output.dir.join(format!("sweep_ecut{ecut}"));
        let (_, history) = run_bounds_against(cfg, &reference, &out_dir, Some(ecut), log)?;
        rows.push((ecut, history));
    }

    let sweep_path = cfg.output.dir.join("sweep.csv");
    let mut out = String::from("# pwcert sweep v1\n");
    let mut header = vec![
        "ecut".to_string(),
        "final_energy".to_string(),
        "true_error".to_string(),
        "err_scf".to_string(),
    ];
    for v in &est.variants {
        header.push(format!("err_disc_{}", v.label()));
    }
    for v in &est.variants {
        header.push(format!("guaranteed_{}", v.label()));
    }
    out.push_str(&header.join(","));
    out.push('\n');
    for (ecut, history) in &rows {
        let last = history.records.last().expect("at least one iterate");
        let bounds = last.bounds.as_ref();
        let mut cols = vec![
            trace::fmt_float(*ecut),
            trace::fmt_float(last.energy),
            trace::fmt_float(last.energy - reference.energy),
        ];
        match bounds {
            Some(b) if b.failure.is_none() => cols.push(trace::fmt_float(b.err_scf)),
            _ => cols.push(String::new()),
        }
        for v in &est.variants {
            cols.push(
                bounds
                    .and_then(|b| b.reports.iter().find(|r| r.variant == *v))
                    .and_then(|r| r.err_disc)
                    .map(trace::fmt_float)
                    .unwrap_or_default(),
            );
        }
        for v in &est.variants {
            cols.push(
                bounds
                    .and_then(|b| b.reports.iter().find(|r| r.variant == *v))
                    .map(|r| r.guaranteed.to_string())
                    .unwrap_or_default(),
            );
        }
        out.push_str(&cols.join(","));
        out.push('\n');
    }
    std::fs::write(&sweep_path, out)?;
    writeln!(log, "sweep: wrote {}", sweep_path.display())?;
    Ok(sweep_path)
}

/// Emits the external potential's Fourier coefficients for inspection:
/// columns `n0,n1,n2,g_norm,re,im` on the reference sphere.
pub fn cmd_gen_potential(cfg: &RunConfig, out: Option<&Path>, log: &mut dyn Write) -> Result<PathBuf> {
    let built = cfg.build()?;
    let field = built.model.external().field();
    let basis = field.basis();
    let path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output.dir.join("potential.csv"));
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut text = String::from("n0,n1,n2,g_norm,re,im\n");
    for (i, n) in basis.gvectors().iter().enumerate() {
        let g = basis.g_cartesian(i);
        let gn = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
        let c = field.coeffs()[i];
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            n[0],
            n[1],
            n[2],
            trace::fmt_float(gn),
            trace::fmt_float(c.re),
            trace::fmt_float(c.im)
        ));
    }
    std::fs::write(&path, text)?;
    writeln!(log, "gen-potential: wrote {}", path.display())?;
    Ok(path)
}
