//! Error types shared across the crate.

use thiserror::Error;

/// Errors raised while constructing meshes, spaces, or boundary data.
#[derive(Debug, Error)]
pub enum MeshError {
    #[error("mesh must have at least one element per direction, got {nx}x{ny}")]
    EmptyMesh { nx: usize, ny: usize },
    #[error("mesh physical size must be positive, got {lx}x{ly}")]
    NonPositiveSize { lx: f64, ly: f64 },
    #[error("boundary segment `{name}` lies outside the domain")]
    SegmentOutsideDomain { name: String },
    #[error("boundary segment `{name}` resolves to no mesh edges")]
    EmptySegment { name: String },
    #[error("unknown boundary segment `{name}`")]
    UnknownSegment { name: String },
    #[error("unsupported function space kind")]
    UnsupportedSpace,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Errors raised by equilibrium, adjoint, and filter solves.
#[derive(Debug, Error)]
pub enum SolveError {
    #[error("element {element} inverted (det F <= 0) during assembly")]
    ElementInverted { element: usize },
    #[error("linear system is singular or the factorization failed")]
    SingularSystem,
    #[error("Newton iteration did not converge within {max_iter} iterations (|R| = {residual:.3e}, tol = {tol:.3e})")]
    NewtonDiverged {
        max_iter: usize,
        residual: f64,
        tol: f64,
    },
    #[error("load step failed after {halvings} increment halvings: {source}")]
    StepFailed {
        halvings: usize,
        #[source]
        source: Box<SolveError>,
    },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value encountered in {context}")]
    NonFinite { context: &'static str },
}

/// Errors raised by the optimization driver.
#[derive(Debug, Error)]
pub enum DriverError {
    #[error("equilibrium solve failed in outer iteration {iteration}, load case `{case}`: {source}")]
    Equilibrium {
        iteration: usize,
        case: String,
        #[source]
        source: SolveError,
    },
    #[error("adjoint solve failed in outer iteration {iteration}, load case `{case}`: {source}")]
    Adjoint {
        iteration: usize,
        case: String,
        #[source]
        source: SolveError,
    },
    #[error("design update failed in outer iteration {iteration}: {reason}")]
    DesignUpdate { iteration: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Errors raised while parsing or validating run configurations.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config `{path}`: {source}")]
    Unreadable {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("invalid value for `{key}`: {reason}")]
    InvalidValue { key: String, reason: String },
    #[error("key `{key}` does not apply to preset `{preset}`")]
    InapplicableKey { key: String, preset: String },
}
