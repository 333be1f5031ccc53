//! Off-the-grid sparse measure recovery from random features.
//!
//! The library implements the full pipeline for recovering discrete measures
//! (sparse sums of Diracs) from a small number of randomized linear
//! measurements:
//!
//! * [`domain`] — torus/box domains, discrete measures, separation and
//!   covering-grid machinery;
//! * [`kernels`] — analytic limit-covariance kernels (squared-Fejér and
//!   Gaussian) with exact derivative oracles and certified constant tables;
//! * [`features`] — the random feature families whose second moment produces
//!   those kernels, with the measurement operator and its adjoint;
//! * [`certificates`] — dual-certificate construction (vanishing-derivative
//!   pre-certificate and the block-randomized golfing scheme) plus
//!   grid-certified nondegeneracy verification;
//! * [`blasso`] — a sliding Frank-Wolfe solver for the measure-space Lasso
//!   and its stability diagnostics;
//! * [`gmm`] — streaming Fourier sketches of Gaussian mixtures and mean
//!   recovery through the solver.
//!
//! Everything is deterministic given explicit seeds: all randomness flows
//! through seeded ChaCha streams and parallel reductions are order-fixed.

pub mod blasso;
pub mod certificates;
pub mod domain;
pub mod features;
pub mod gmm;
pub mod kernels;

pub use blasso::{BlassoProblem, SolveResult, SolverConfig, StabilityReport};
pub use gmm::{GmmModel, GmmRecovery, Sketch, SketchConfig};
pub use certificates::{
    CertificateFunction, GolfingConfig, GolfingTrace, InterpolationSystem, NondegeneracyReport,
};
pub use domain::{Atom, CoveringGrid, DiscreteMeasure, Domain, RegionPartition, SepNorm};
pub use features::{DrawSpec, FeatureDraw, FeatureFamily, FeatureMap, LipschitzBundle, MeasurementSet};
pub use kernels::{AcceptableKernelReport, KernelFamily, KernelModel, Table2};

/// Library-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("family/domain mismatch: {0}")]
    FamilyDomainMismatch(String),

    #[error("covering grid would need {required} points, cap is {cap}; use a coarser spacing or a smaller region")]
    GridTooLarge { required: u128, cap: u64 },

    #[error("closed-form constants require f_c >= {required} for d={d}, s_max={s_max} (got f_c={got})")]
    FejerCutoffTooSmall {
        got: u32,
        required: u32,
        d: usize,
        s_max: usize,
    },

    #[error("interpolation system is ill-conditioned (cond ~ {cond:.3e}); more measurements or better-separated spikes are needed")]
    IllConditioned { cond: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("serialization: {0}")]
    Serialization(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
