//! Error types shared across the crate.

use thiserror::Error;

#[derive(Clone, Debug, Error)]
pub enum Error {
    #[error("rest point is not stable: c = -b'(x0) = {c} (need c > 0)")]
    NonStableRestPoint { c: f64 },

    #[error("diffusion is degenerate: sigma({x}) = {sigma} (need sigma > 0)")]
    DegenerateDiffusion { x: f64, sigma: f64 },

    #[error("drift does not vanish at the rest point: b({x0}) = {b}")]
    DriftNotZeroAtRestPoint { x0: f64, b: f64 },

    #[error("invalid exit domain: {0}")]
    InvalidDomain(String),

    #[error("adaptive quadrature failed to reach tolerance {tol} on [{a}, {b}]")]
    QuadratureFailure { a: f64, b: f64, tol: f64 },

    #[error("M*sigma_bar^2 = {msig2} must exceed 2c = {two_c} for the t* rule")]
    InvalidM { msig2: f64, two_c: f64 },

    #[error("invalid scheme parameters: {0}")]
    InvalidParams(String),

    #[error("crossing roots are complex at t = {t} (discriminant = {disc})")]
    ComplexRoots { t: f64, disc: f64 },

    #[error("state or log likelihood ratio became non-finite at step {step} (x = {x})")]
    NonFiniteState { step: usize, x: f64 },

    #[error("region lemma violated in region {region} at (t, x) = ({t}, {x}): margin {margin}")]
    LemmaViolation {
        region: usize,
        t: f64,
        x: f64,
        margin: f64,
    },

    #[error("theorem hypothesis violated: {0}")]
    HypothesisViolation(String),

    #[error("no trajectory exited; estimate is 0 with no variance information")]
    ZeroHits,

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
