//! Reference-solution artifacts.
//!
//! File layout (version `PWREF001`):
//!
//! ```text
//! bytes 0..8    magic b"PWREF001"
//! bytes 8..12   u32 little-endian header length H
//! bytes 12..12+H  JSON header (UTF-8)
//! bytes 12+H..  raw array payload
//! ```
//!
//! The header lists every array with dtype (`f64le` or `i64le`), shape and
//! byte offset into the payload, so other implementations can read the file
//! with nothing beyond a JSON parser. Arrays stored:
//!
//! * `eigenvalues` — `[n_k, n_el]`, occupied eigenvalues per fiber
//!   (Hartree, ascending);
//! * `density` — `[n_rho, 2]`, real/imaginary parts of the converged
//!   density coefficients on the density carrier (Hermitian symmetric);
//! * `density_gvectors` — `[n_rho, 3]`, integer Fourier indices of those
//!   coefficients.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pw_basis::PeriodicField;
use crate::scf::ScfHistory;

const MAGIC: &[u8; 8] = b"PWREF001";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArrayInfo {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArtifactHeader {
    pub format: String,
    pub digest: String,
    pub energy: f64,
    pub n_el: usize,
    pub n_k: usize,
    pub iterations: usize,
    pub final_residual: f64,
    pub arrays: Vec<ArrayInfo>,
}

/// In-memory reference solution.
#[derive(Debug, Clone)]
pub struct ReferenceSolution {
    pub digest: String,
    pub energy: f64,
    pub n_el: usize,
    pub iterations: usize,
    pub final_residual: f64,
    /// Per fiber: the `n_el + 1` lowest eigenvalues.
    pub eigenvalues: Vec<Vec<f64>>,
    /// Density coefficients with their integer G indices.
    pub density: Vec<(
        [i64; 3],
        num_complex::Complex64,
    )>,
}

impl ReferenceSolution {
    /// Captures the final iterate of a converged reference history.
    pub fn from_history(digest: String, history: &ScfHistory, n_el: usize) -> Result<Self> {
        let last = history
            .records
            .last()
            .ok_or_else(|| Error::Artifact("empty history".into()))?;
        if !history.converged {
            return Err(Error::NonConvergence {
                max_iter: history.records.len(),
                residual: history.final_residual,
            });
        }
        let eigenvalues = last
            .orbitals
            .iter()
            .map(|o| o.eigenvalues().to_vec())
            .collect::<Vec<_>>();
        let density = density_pairs(&last.density);
        Ok(ReferenceSolution {
            digest,
            energy: last.energy,
            n_el,
            iterations: history.records.len(),
            final_residual: history.final_residual,
            eigenvalues,
            density,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let n_k = self.eigenvalues.len();
        let per_fiber = self.eigenvalues.first().map_or(0, Vec::len);
        let n_rho = self.density.len();

        let mut payload: Vec<u8> = Vec::new();
        let eig_offset = payload.len();
        for fiber in &self.eigenvalues {
            if fiber.len() != per_fiber {
                return Err(Error::Artifact("ragged eigenvalue table".into()));
            }
            for &v in fiber {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let rho_offset = payload.len();
        for (_, c) in &self.density {
            payload.extend_from_slice(&c.re.to_le_bytes());
            payload.extend_from_slice(&c.im.to_le_bytes());
        }
        let gv_offset = payload.len();
        for (n, _) in &self.density {
            for &idx in n {
                payload.extend_from_slice(&idx.to_le_bytes());
            }
        }

        let header = ArtifactHeader {
            format: String::from_utf8_lossy(MAGIC).into_owned(),
            digest: self.digest.clone(),
            energy: self.energy,
            n_el: self.n_el,
            n_k,
            iterations: self.iterations,
            final_residual: self.final_residual,
            arrays: vec![
                ArrayInfo {
                    name: "eigenvalues".into(),
                    dtype: "f64le".into(),
                    shape: vec![n_k, per_fiber],
                    offset: eig_offset,
                },
                ArrayInfo {
                    name: "density".into(),
                    dtype: "f64le".into(),
                    shape: vec![n_rho, 2],
                    offset: rho_offset,
                },
                ArrayInfo {
                    name: "density_gvectors".into(),
                    dtype: "i64le".into(),
                    shape: vec![n_rho, 3],
                    offset: gv_offset,
                },
            ],
        };
        let header_json = serde_json::to_vec(&header).expect("header serializes");

        let mut file = std::fs::File::create(path)?;
        file.write_all(MAGIC)?;
        file.write_all(&(header_json.len() as u32).to_le_bytes())?;
        file.write_all(&header_json)?;
        file.write_all(&payload)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ReferenceSolution> {
        let mut file = std::fs::File::open(path).map_err(|e| {
            Error::MissingReference(format!("{}: {e}", path.display()))
        })?;
        let mut magic = [0u8; 8];
        file.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Artifact(format!(
                "{} is not a reference artifact",
                path.display()
            )));
        }
        let mut len_bytes = [0u8; 4];
        file.read_exact(&mut len_bytes)?;
        let header_len = u32::from_le_bytes(len_bytes) as usize;
        let mut header_json = vec![0u8; header_len];
        file.read_exact(&mut header_json)?;
        let header: ArtifactHeader = serde_json::from_slice(&header_json)
            .map_err(|e| Error::Artifact(format!("bad header: {e}")))?;
        let mut payload = Vec::new();
        file.read_to_end(&mut payload)?;

        let find = |name: &str| -> Result<&ArrayInfo> {
            header
                .arrays
                .iter()
                .find(|a| a.name == name)
                .ok_or_else(|| Error::Artifact(format!("missing array '{name}'")))
        };
        let read_f64 = |info: &ArrayInfo| -> Result<Vec<f64>> {
            let count: usize = info.shape.iter().product();
            let end = info.offset + 8 * count;
            let bytes = payload
                .get(info.offset..end)
                .ok_or_else(|| Error::Artifact("payload truncated".into()))?;
            Ok(bytes
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect())
        };
        let read_i64 = |info: &ArrayInfo| -> Result<Vec<i64>> {
            let count: usize = info.shape.iter().product();
            let end = info.offset + 8 * count;
            let bytes = payload
                .get(info.offset..end)
                .ok_or_else(|| Error::Artifact("payload truncated".into()))?;
            Ok(bytes
                .chunks_exact(8)
                .map(|b| i64::from_le_bytes(b.try_into().unwrap()))
                .collect())
        };

        let eig_info = find("eigenvalues")?;
        let eig_flat = read_f64(eig_info)?;
        let per_fiber = eig_info.shape[1];
        let eigenvalues = eig_flat
            .chunks_exact(per_fiber.max(1))
            .map(|c| c.to_vec())
            .collect();

        let rho_info = find("density")?;
        let rho_flat = read_f64(rho_info)?;
        let gv_info = find("density_gvectors")?;
        let gv_flat = read_i64(gv_info)?;
        if rho_flat.len() / 2 != gv_flat.len() / 3 {
            return Err(Error::Artifact("density/gvector count mismatch".into()));
        }
        let density = rho_flat
            .chunks_exact(2)
            .zip(gv_flat.chunks_exact(3))
            .map(|(c, n)| {
                (
                    [n[0], n[1], n[2]],
                    num_complex::Complex64::new(c[0], c[1]),
                )
            })
            .collect();

        Ok(ReferenceSolution {
            digest: header.digest,
            energy: header.energy,
            n_el: header.n_el,
            iterations: header.iterations,
            final_residual: header.final_residual,
            eigenvalues,
            density,
        })
    }

    /// Loads and checks the digest against the producing config.
    pub fn load_checked(path: &Path, expected_digest: &str) -> Result<ReferenceSolution> {
        let loaded = Self::load(path)?;
        if loaded.digest != expected_digest {
            return Err(Error::Artifact(format!(
                "artifact digest {} does not match config digest {}",
                &loaded.digest[..16.min(loaded.digest.len())],
                &expected_digest[..16]
            )));
        }
        Ok(loaded)
    }
}

fn density_pairs(density: &PeriodicField) -> Vec<([i64; 3], num_complex::Complex64)> {
    density
        .basis()
        .gvectors()
        .iter()
        .zip(density.coeffs())
        .map(|(n, c)| (*n, *c))
        .collect()
}
