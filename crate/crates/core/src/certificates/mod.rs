//! Dual certificates: interpolation systems, pre-certificates, the
//! block-golfing construction, and nondegeneracy verification.
//!
//! A dual certificate for a discrete measure is a function `eta` in the
//! feature span that reaches `sign(a_j)` at every spike and stays
//! strictly inside `[-1, 1]` elsewhere, with definite curvature near the
//! spikes. This module builds such functions three ways (limit-kernel
//! interpolation, empirical interpolation, golfing over feature blocks)
//! and turns grid scans of the result into continuum guarantees.

mod certificate;
mod golfing;
mod interpolation;
mod verify;

pub use certificate::{build_pre_certificate, CertificateFunction, CertificateSource};
pub use golfing::{golfing_certificate, BlockRecord, GolfingConfig, GolfingTrace};
pub use interpolation::InterpolationSystem;
pub use verify::{
    predicted_sample_counts, verify_nondegeneracy, verify_nondegeneracy_heuristic,
    NondegeneracyReport, SampleCountMode, Verdict, VerifyMode,
};

use nalgebra::DMatrix;

/// Smallest and largest eigenvalue of a symmetric matrix.
pub(crate) fn sym_eig_range(h: &DMatrix<f64>) -> (f64, f64) {
    if h.nrows() == 1 {
        let v = h[(0, 0)];
        return (v, v);
    }
    h.symmetric_eigenvalues()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}
