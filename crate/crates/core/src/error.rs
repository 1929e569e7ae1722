use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type. CLI exit codes are derived from these variants.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    Lattice(String),

    #[error("invalid basis: {0}")]
    Basis(String),

    #[error("incompatible bases: {0}")]
    Incompatible(String),

    #[error("invalid model: {0}")]
    Model(String),

    #[error("orbitals not orthonormal: max deviation {0:.3e}")]
    NotOrthonormal(f64),

    #[error("degenerate Fermi level: gap {gap:.3e} Ha below tolerance {tol:.3e}")]
    DegenerateFermi { gap: f64, tol: f64 },

    #[error("estimator unavailable: {0}")]
    EstimatorUnavailable(String),

    #[error("inconsistent estimator inputs: {0}")]
    InconsistentInputs(String),

    #[error("operator not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("SCF did not converge within {max_iter} iterations (residual {residual:.3e})")]
    NonConvergence { max_iter: usize, residual: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("missing reference artifact: {0}")]
    MissingReference(String),

    #[error("artifact error: {0}")]
    Artifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
