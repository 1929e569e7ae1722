//! Plot-ready trace emission: a per-iteration CSV and a JSON summary.
//!
//! CSV schema (version `v1`): one comment line carrying the version and a
//! timestamp (excluded from byte comparisons), then a header, then one row
//! per SCF iterate with `.` decimals, `,` separators and 17-significant-
//! digit floats. Column order: `m`, `energy`, `true_error`, `err_scf`, then
//! per selected variant the blocks `err_disc_*`, `shift_*`, `opnorm_*`,
//! `guaranteed_*`. Cells of refused estimator variants are left empty.

use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::error::Result;
use crate::estimators::BoundVariant;
use crate::scf::ScfHistory;

pub const TRACE_VERSION: &str = "v1";

/// `{:.16e}` keeps 17 significant digits, enough to round-trip an f64.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn trace_header(variants: &[BoundVariant]) -> String {
    let mut cols = vec![
        "m".to_string(),
        "energy".to_string(),
        "true_error".to_string(),
        "err_scf".to_string(),
    ];
    for v in variants {
        cols.push(format!("err_disc_{}", v.label()));
    }
    for v in variants {
        cols.push(format!("shift_{}", v.label()));
    }
    for v in variants {
        cols.push(format!("opnorm_{}", v.label()));
    }
    for v in variants {
        cols.push(format!("guaranteed_{}", v.label()));
    }
    cols.join(",")
}

/// Renders the full trace document. The first line is the only
/// non-deterministic one.
pub fn render_trace(
    history: &ScfHistory,
    variants: &[BoundVariant],
    reference_energy: f64,
) -> String {
    let stamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut out = format!("# pwcert trace {TRACE_VERSION} generated_unix={stamp}\n");
    out.push_str(&trace_header(variants));
    out.push('\n');
    for rec in &history.records {
        let mut cols = vec![
            rec.m.to_string(),
            fmt_float(rec.energy),
            fmt_float(rec.energy - reference_energy),
        ];
        let bounds = rec.bounds.as_ref();
        match bounds {
            Some(b) if b.failure.is_none() => cols.push(fmt_float(b.err_scf)),
            _ => cols.push(String::new()),
        }
        let report = |v: &BoundVariant| {
            bounds
                .and_then(|b| b.reports.iter().find(|r| r.variant == *v))
        };
        for v in variants {
            cols.push(
                report(v)
                    .and_then(|r| r.err_disc)
                    .map(fmt_float)
                    .unwrap_or_default(),
            );
        }
        for v in variants {
            cols.push(
                report(v)
                    .map(|r| fmt_float(r.shift_used))
                    .unwrap_or_default(),
            );
        }
        for v in variants {
            cols.push(
                report(v)
                    .and_then(|r| r.opnorm_bound)
                    .map(fmt_float)
                    .unwrap_or_default(),
            );
        }
        for v in variants {
            cols.push(
                report(v)
                    .map(|r| r.guaranteed.to_string())
                    .unwrap_or_default(),
            );
        }
        out.push_str(&cols.join(","));
        out.push('\n');
    }
    out
}

pub fn write_trace(
    path: &Path,
    history: &ScfHistory,
    variants: &[BoundVariant],
    reference_energy: f64,
) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(render_trace(history, variants, reference_energy).as_bytes())?;
    Ok(())
}

/// End-of-run summary mirroring the ratio tables: per-variant
/// `(err_disc + err_scf) / true_error` at the final iterate, cumulative
/// bound-computation seconds, and the SCF/discretization crossover.
#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub config_digest: String,
    pub reference_energy: f64,
    pub final_energy: f64,
    pub converged: bool,
    pub iterations: usize,
    pub final_true_error: f64,
    pub final_err_scf: Option<f64>,
    /// `(err_disc + err_scf) / true_error` at the final iterate.
    pub ratios: serde_json::Map<String, serde_json::Value>,
    /// First iterate where `err_disc > err_scf`, per variant.
    pub crossover_iteration: serde_json::Map<String, serde_json::Value>,
    /// Total seconds spent per variant across the run.
    pub variant_seconds: serde_json::Map<String, serde_json::Value>,
    pub guaranteed: serde_json::Map<String, serde_json::Value>,
}

pub fn summarize(
    digest: &str,
    history: &ScfHistory,
    variants: &[BoundVariant],
    reference_energy: f64,
) -> RunSummary {
    let last = history.records.last();
    let final_energy = last.map(|r| r.energy).unwrap_or(f64::NAN);
    let final_true_error = final_energy - reference_energy;
    let final_bounds = last.and_then(|r| r.bounds.as_ref());

    let mut ratios = serde_json::Map::new();
    let mut crossover = serde_json::Map::new();
    let mut seconds = serde_json::Map::new();
    let mut guaranteed = serde_json::Map::new();
    for v in variants {
        let label = v.label().to_string();
        if let Some(report) = final_bounds.and_then(|b| b.reports.iter().find(|r| r.variant == *v))
        {
            if let Some(err_disc) = report.err_disc {
                let ratio = (err_disc + report.err_scf) / final_true_error;
                ratios.insert(label.clone(), json_f64(ratio));
                guaranteed.insert(label.clone(), serde_json::Value::Bool(report.guaranteed));
            }
        }
        let cross = history.records.iter().find_map(|rec| {
            let b = rec.bounds.as_ref()?;
            let rep = b.reports.iter().find(|r| r.variant == *v)?;
            let d = rep.err_disc?;
            (d > b.err_scf).then_some(rec.m)
        });
        if let Some(m) = cross {
            crossover.insert(label.clone(), serde_json::Value::from(m));
        }
        let total: f64 = history
            .records
            .iter()
            .filter_map(|rec| {
                let b = rec.bounds.as_ref()?;
                b.reports.iter().find(|r| r.variant == *v).map(|r| r.seconds)
            })
            .sum();
        seconds.insert(label, json_f64(total));
    }

    RunSummary {
        config_digest: digest.to_string(),
        reference_energy,
        final_energy,
        converged: history.converged,
        iterations: history.iterations(),
        final_true_error,
        final_err_scf: final_bounds.map(|b| b.err_scf).filter(|s| s.is_finite()),
        ratios,
        crossover_iteration: crossover,
        variant_seconds: seconds,
        guaranteed,
    }
}

fn json_f64(x: f64) -> serde_json::Value {
    serde_json::Number::from_f64(x)
        .map(serde_json::Value::Number)
        .unwrap_or(serde_json::Value::Null)
}

pub fn write_summary(path: &Path, summary: &RunSummary) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let json = serde_json::to_string_pretty(summary).expect("summary serializes");
    std::fs::write(path, json)?;
    Ok(())
}
