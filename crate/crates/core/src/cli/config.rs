//! Run configuration: a TOML document covering the model, discretization,
//! SCF and estimator settings, and output locations. Round-trips through
//! serde; the reference digest hashes the solution-defining subset.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimators::{BoundVariant, EstimatorConfig};
use crate::kpoints::{fiber_setup, reference_bases, KGrid};
use crate::model::{random_potential_1d, ExternalPotential, Functional, ModelSpec};
use crate::pw_basis::{Lattice, PlanewaveBasis};
use crate::scf::{FiberSetup, InitialGuess, Mixing, ScfConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub lattice: LatticeConfig,
    pub model: ModelConfig,
    pub potential: PotentialConfig,
    pub discretization: DiscretizationConfig,
    #[serde(default)]
    pub scf: ScfSection,
    #[serde(default)]
    pub estimators: EstimatorSection,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub dimension: usize,
    /// Lattice vectors, one row per vector (Bohr).
    pub cell: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_el: usize,
    /// One of `linear`, `rhf`, `xalpha`.
    pub functional: String,
    /// Xα prefactor; only read when `functional = "xalpha"`.
    #[serde(default)]
    pub xalpha_coeff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialConfig {
    /// One of `zero`, `random1d`.
    pub kind: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(default = "default_mode_cutoff")]
    pub mode_cutoff: f64,
}

fn default_amplitude() -> f64 {
    10.0
}

fn default_decay() -> f64 {
    1.1
}

fn default_mode_cutoff() -> f64 {
    100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizationConfig {
    /// Computational cutoff (Hartree).
    pub ecut: f64,
    /// Reference cutoff (Hartree); must exceed `ecut`.
    pub ecut_ref: f64,
    /// Uniform k-grid sizes, one per lattice dimension.
    #[serde(default)]
    pub kgrid: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScfSection {
    pub density_tol: f64,
    pub max_iter: usize,
    /// `damped` or `anderson`.
    pub mixing: String,
    pub damping: f64,
    pub anderson_depth: usize,
    /// `constant` or `random`.
    pub initial_guess: String,
    pub guess_seed: u64,
}

impl Default for ScfSection {
    fn default() -> Self {
        ScfSection {
            density_tol: 1e-10,
            max_iter: 100,
            mixing: "damped".into(),
            damping: 0.8,
            anderson_depth: 10,
            initial_guess: "constant".into(),
            guess_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    pub variants: Vec<String>,
    pub gap_tol: f64,
    pub shift_margin: f64,
    pub use_next_eigenvalue_opnorm: bool,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        EstimatorSection {
            variants: BoundVariant::all().iter().map(|v| v.label().into()).collect(),
            gap_tol: 1e-8,
            shift_margin: 0.1,
            use_next_eigenvalue_opnorm: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Directory for traces and summaries; created if missing.
    pub dir: PathBuf,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("TOML parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.lattice.cell.len() != self.lattice.dimension {
            return Err(Error::Config(format!(
                "cell has {} vectors for dimension {}",
                self.lattice.cell.len(),
                self.lattice.dimension
            )));
        }
        if !(self.discretization.ecut > 0.0) || !(self.discretization.ecut_ref > 0.0) {
            return Err(Error::Config("cutoffs must be positive".into()));
        }
        if self.discretization.ecut > self.discretization.ecut_ref {
            return Err(Error::Config(format!(
                "ecut {} exceeds ecut_ref {}",
                self.discretization.ecut, self.discretization.ecut_ref
            )));
        }
        if let Some(kgrid) = &self.discretization.kgrid {
            if kgrid.len() != self.lattice.dimension {
                return Err(Error::Config(format!(
                    "kgrid has {} sizes for dimension {}",
                    kgrid.len(),
                    self.lattice.dimension
                )));
            }
        }
        match self.model.functional.as_str() {
            "linear" | "rhf" => {}
            "xalpha" => {
                if !(self.model.xalpha_coeff >= 0.0) {
                    return Err(Error::Config("xalpha_coeff must be ≥ 0".into()));
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown functional '{other}' (expected linear, rhf or xalpha)"
                )))
            }
        }
        match self.potential.kind.as_str() {
            "zero" => {}
            "random1d" => {
                if self.lattice.dimension != 1 {
                    return Err(Error::Config(
                        "random1d potential needs a 1D lattice".into(),
                    ));
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown potential kind '{other}' (expected zero or random1d)"
                )))
            }
        }
        match self.scf.mixing.as_str() {
            "damped" | "anderson" => {}
            other => {
                return Err(Error::Config(format!(
                    "unknown mixing '{other}' (expected damped or anderson)"
                )))
            }
        }
        match self.scf.initial_guess.as_str() {
            "constant" | "random" => {}
            other => {
                return Err(Error::Config(format!(
                    "unknown initial_guess '{other}' (expected constant or random)"
                )))
            }
        }
        if self.estimators.variants.is_empty() {
            return Err(Error::Config("estimator variant list is empty".into()));
        }
        for v in &self.estimators.variants {
            if BoundVariant::from_label(v).is_none() {
                return Err(Error::Config(format!("unknown estimator variant '{v}'")));
            }
        }
        self.scf_config()?.validate()?;
        Ok(())
    }

    pub fn lattice(&self) -> Result<Lattice> {
        Lattice::new(&self.lattice.cell)
    }

    pub fn kgrid(&self) -> Result<KGrid> {
        let lattice = self.lattice()?;
        match &self.discretization.kgrid {
            Some(sizes) => KGrid::new(&lattice, sizes),
            None => Ok(KGrid::gamma(&lattice)),
        }
    }

    pub fn functional(&self) -> Functional {
        match self.model.functional.as_str() {
            "linear" => Functional::Linear,
            "rhf" => Functional::Rhf,
            "xalpha" => Functional::RhfXAlpha {
                c_alpha: self.model.xalpha_coeff,
            },
            _ => unreachable!("validated"),
        }
    }

    pub fn scf_config(&self) -> Result<ScfConfig> {
        let mixing = match self.scf.mixing.as_str() {
            "damped" => Mixing::Damped {
                beta: self.scf.damping,
            },
            "anderson" => Mixing::Anderson {
                depth: self.scf.anderson_depth,
                beta: self.scf.damping,
            },
            _ => return Err(Error::Config("unknown mixing".into())),
        };
        let initial_guess = match self.scf.initial_guess.as_str() {
            "constant" => InitialGuess::Constant,
            "random" => InitialGuess::Random {
                seed: self.scf.guess_seed,
            },
            _ => return Err(Error::Config("unknown initial guess".into())),
        };
        Ok(ScfConfig {
            density_tol: self.scf.density_tol,
            max_iter: self.scf.max_iter,
            mixing,
            initial_guess,
        })
    }

    pub fn estimator_config(&self) -> EstimatorConfig {
        EstimatorConfig {
            variants: self
                .estimators
                .variants
                .iter()
                .map(|v| BoundVariant::from_label(v).expect("validated"))
                .collect(),
            gap_tol: self.estimators.gap_tol,
            shift_margin: self.estimators.shift_margin,
            use_next_eigenvalue_opnorm: self.estimators.use_next_eigenvalue_opnorm,
        }
    }

    fn external_potential(&self, basis: &Arc<PlanewaveBasis>) -> Result<ExternalPotential> {
        match self.potential.kind.as_str() {
            "zero" => Ok(ExternalPotential::zero(basis.clone())),
            "random1d" => random_potential_1d(
                basis,
                self.potential.seed,
                self.potential.amplitude,
                self.potential.decay,
                self.potential.mode_cutoff,
            ),
            _ => unreachable!("validated"),
        }
    }

    /// Instantiates the model and both discretizations: the fibers at the
    /// computational cutoff and at the reference cutoff (for the reference
    /// run).
    pub fn build(&self) -> Result<BuiltProblem> {
        let lattice = self.lattice()?;
        let kgrid = self.kgrid()?;
        let (gamma, fibers) = reference_bases(&lattice, self.discretization.ecut_ref, &kgrid)?;
        let external = self.external_potential(&gamma)?;
        let model = ModelSpec::new(self.model.n_el, external, self.functional())?;
        let computational = fiber_setup(&fibers, self.discretization.ecut)?;
        let reference = fiber_setup(&fibers, self.discretization.ecut_ref)?;
        Ok(BuiltProblem {
            model,
            kgrid,
            computational,
            reference,
        })
    }

    /// Reference run settings: one decade below the run tolerance.
    pub fn reference_scf_config(&self) -> Result<ScfConfig> {
        let mut cfg = self.scf_config()?;
        cfg.density_tol *= 0.1;
        Ok(cfg)
    }

    /// Hex digest of the reference-solution-defining subset of the config.
    pub fn reference_digest(&self) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            lattice: &'a LatticeConfig,
            n_el: usize,
            functional: &'a str,
            xalpha_coeff: f64,
            potential: &'a PotentialConfig,
            ecut_ref: f64,
            kgrid: Option<&'a Vec<usize>>,
            scf: &'a ScfSection,
        }
        let key = Key {
            lattice: &self.lattice,
            n_el: self.model.n_el,
            functional: &self.model.functional,
            xalpha_coeff: self.model.xalpha_coeff,
            potential: &self.potential,
            ecut_ref: self.discretization.ecut_ref,
            kgrid: self.discretization.kgrid.as_ref(),
            scf: &self.scf,
        };
        let json = serde_json::to_string(&key).expect("key serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        hex::encode(hasher.finalize())
    }

    /// Directory for reference artifacts: `PWCERT_CACHE_DIR` when set,
    /// otherwise `<output.dir>/cache`.
    pub fn cache_dir(&self) -> PathBuf {
        match std::env::var_os("PWCERT_CACHE_DIR") {
            Some(dir) => PathBuf::from(dir),
            None => self.output.dir.join("cache"),
        }
    }

    pub fn reference_artifact_path(&self) -> PathBuf {
        let digest = self.reference_digest();
        self.cache_dir().join(format!("ref-{}.pwref", &digest[..16]))
    }
}

/// Everything a command needs to run: the model plus the two fiber setups.
pub struct BuiltProblem {
    pub model: ModelSpec,
    pub kgrid: KGrid,
    /// Fibers masked at the computational cutoff.
    pub computational: FiberSetup,
    /// Fibers masked at the reference cutoff (full spheres).
    pub reference: FiberSetup,
}
