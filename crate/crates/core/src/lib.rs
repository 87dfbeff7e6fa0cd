//! Importance sampling for finite-time exit probabilities of 1-D
//! small-noise diffusions.
//!
//! The library estimates theta_eps = P(X leaves a domain by time T) for the
//! SDE dX = b(X) ds + sqrt(eps) sigma(X) dB started at a stable rest point,
//! where theta_eps decays like exp(-2L/eps) as eps -> 0 with L the exit
//! level of the domain. Plain Monte Carlo is useless in this regime, so
//! trajectories are simulated under a change of measure driven by a
//! feedback control derived from subsolutions of the limiting
//! Hamilton-Jacobi-Bellman equation; unbiasedness is restored through the
//! Girsanov likelihood ratio.
//!
//! Modules:
//!
//! * [`model`]: process models (drift, diffusion, rest point,
//!   linearization, quasipotential) and exit domains with their levels.
//! * [`subsolution`]: the subsolution family (quasipotential piece, LQR
//!   pieces, eps = 0 HJB solution), exponential mollification, the t*
//!   handoff, and the control.
//! * [`sampler`]: Euler-Maruyama simulation under the tilted dynamics,
//!   likelihood-ratio estimators, and experiment grids, with
//!   counter-based RNG for worker-count-independent reproducibility.
//! * [`verify`]: numerical certification of the subsolution property on
//!   space-time grids and of the second-moment performance bounds.
//! * [`quad`], [`rng`], [`error`]: supporting numerics and error types.

pub mod error;
pub mod model;
pub mod quad;
pub mod report;
pub mod rng;
pub mod sampler;
pub mod subsolution;
pub mod verify;

pub use error::{Error, Result};
pub use model::{DomainKind, ExitDomain, ProcessModel, RealFn};
pub use sampler::{
    CellResult, EstimatorReport, ExitSide, GridSpec, SchemeSpec, SimConfig, TrajectoryOutcome,
    XhatRule,
};
pub use subsolution::{
    MRule, MollifyEval, PieceEval, SchemeKind, SchemeParams, SubsolutionSet,
};
pub use verify::{
    AnalysisParams, Dynamics, JIntegrals, LemmaReport, NonlinearConstants, RegionReport,
    ShrinkCertification, TheoremBound,
};
