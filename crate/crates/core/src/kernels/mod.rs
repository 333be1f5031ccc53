//! Limit covariance kernels with exact derivative oracles.
//!
//! A kernel here is the infinite-feature covariance `K(x, x')`: squared
//! Fejér on the torus (sup-norm separation) or Gaussian on a box (Euclidean
//! separation). Both are translation invariant, `K(x, x') = G(x' - x)`, and
//! normalized to `K(x, x) = 1`.
//!
//! Derivative naming follows the two-slot convention: `d1`/`grad1` acts on
//! the first argument, `hess2` is the Hessian in the second, `d1_hess2` is
//! one first-slot partial of that Hessian. These blocks are exactly what the
//! certificate interpolation matrix is made of.

mod fejer;
pub mod report;
pub mod scan;

pub(crate) use fejer::Fejer1d;
pub use report::{
    acceptable_report, conditions_with, fejer_table2, gaussian_envelope, gaussian_table2,
    tightest_conditions, AcceptableKernelReport, ConditionOutcome, ReferenceComparison, Table2,
    GAUSSIAN_ABC_DEFAULT,
};
pub use scan::{scan_kernel_bands, KernelBandScan, ScanConfig};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::domain::{Domain, DomainKind, SepNorm};
use crate::{Error, Result};

/// Kernel family and its shape parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelFamily {
    /// `prod_i (sin(n pi t_i) / (n sin(pi t_i)))^4`, `n = f_c/2 + 1`, torus.
    SquaredFejer { f_c: u32 },
    /// `exp(-|t|^2 / (2 sigma^2))`, box domain.
    Gaussian { sigma: f64 },
}

/// A limit kernel bound to its domain.
#[derive(Clone, Debug)]
pub struct KernelModel {
    family: KernelFamily,
    domain: Domain,
    fejer: Option<Fejer1d>,
}

impl KernelModel {
    pub fn new(family: KernelFamily, domain: Domain) -> Result<Self> {
        let fejer = match family {
            KernelFamily::SquaredFejer { f_c } => {
                if domain.kind() != DomainKind::Torus {
                    return Err(Error::FamilyDomainMismatch(
                        "squared Fejér kernel requires a torus domain".into(),
                    ));
                }
                if domain.sep_norm() != SepNorm::Inf {
                    return Err(Error::FamilyDomainMismatch(
                        "squared Fejér kernel uses sup-norm separation".into(),
                    ));
                }
                Some(Fejer1d::new(f_c)?)
            }
            KernelFamily::Gaussian { sigma } => {
                if !(sigma.is_finite() && sigma > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "Gaussian width must be positive, got {sigma}"
                    )));
                }
                if domain.kind() != DomainKind::Box {
                    return Err(Error::FamilyDomainMismatch(
                        "Gaussian kernel requires a box domain".into(),
                    ));
                }
                if domain.sep_norm() != SepNorm::L2 {
                    return Err(Error::FamilyDomainMismatch(
                        "Gaussian kernel uses Euclidean separation".into(),
                    ));
                }
                None
            }
        };
        Ok(KernelModel { family, domain, fejer })
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Near-region radius in the domain's separation norm.
    pub fn eps_near(&self) -> f64 {
        match self.family {
            KernelFamily::SquaredFejer { f_c } => {
                0.1 / ((self.dim() as f64).sqrt() * f_c as f64)
            }
            KernelFamily::Gaussian { sigma } => sigma / 2.0f64.sqrt(),
        }
    }

    /// Minimal spike separation under which the constant table certifies
    /// `s_max` spikes (default width schedule for the Gaussian).
    pub fn separation_radius(&self, s_max: usize) -> f64 {
        let d = self.dim() as f64;
        let s = s_max.max(1) as f64;
        match self.family {
            KernelFamily::SquaredFejer { f_c } => 5.0 * d.sqrt() * s.powf(0.25) / f_c as f64,
            KernelFamily::Gaussian { sigma } => {
                let (a, b, c) = report::GAUSSIAN_ABC_DEFAULT;
                let e = a * s.ln() + b * d.ln() + c;
                2.0f64.sqrt() * sigma * e.sqrt()
            }
        }
    }

    /// Exact diagonal curvature `partial_{1,i} partial_{2,i} K(x, x)`,
    /// identical across coordinates and positions.
    pub fn diag_curvature(&self) -> f64 {
        match self.family {
            KernelFamily::SquaredFejer { .. } => {
                self.fejer.as_ref().unwrap().neg_curvature_at_zero()
            }
            KernelFamily::Gaussian { sigma } => 1.0 / (sigma * sigma),
        }
    }

    pub(crate) fn fejer(&self) -> Option<&Fejer1d> {
        self.fejer.as_ref()
    }

    // -- derivative oracles --------------------------------------------------

    pub fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        let t = self.domain.displacement(x, y);
        self.g0(&t)
    }

    /// Gradient in the second slot: `(nabla_2 K)(x, y)`.
    pub fn grad2(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let t = self.domain.displacement(x, y);
        (0..t.len()).map(|j| self.g1(&t, j)).collect()
    }

    /// Gradient in the first slot.
    pub fn grad1(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        self.grad2(x, y).into_iter().map(|v| -v).collect()
    }

    /// Mixed block `[partial_{1,i} partial_{2,j} K]_{ij}`.
    pub fn d1d2(&self, x: &[f64], y: &[f64]) -> DMatrix<f64> {
        let t = self.domain.displacement(x, y);
        let d = t.len();
        DMatrix::from_fn(d, d, |i, j| -self.g2(&t, i, j))
    }

    /// Hessian in the second slot.
    pub fn hess2(&self, x: &[f64], y: &[f64]) -> DMatrix<f64> {
        let t = self.domain.displacement(x, y);
        let d = t.len();
        DMatrix::from_fn(d, d, |i, j| self.g2(&t, i, j))
    }

    /// `partial_{1,i}` of the second-slot Hessian.
    pub fn d1_hess2(&self, i: usize, x: &[f64], y: &[f64]) -> DMatrix<f64> {
        let t = self.domain.displacement(x, y);
        let d = t.len();
        DMatrix::from_fn(d, d, |j, k| -self.g3(&t, i, j, k))
    }

    // -- translation-invariant profile G and its partials ---------------------

    fn g0(&self, t: &[f64]) -> f64 {
        match self.family {
            KernelFamily::Gaussian { sigma } => {
                let q: f64 = t.iter().map(|&c| c * c).sum();
                (-q / (2.0 * sigma * sigma)).exp()
            }
            KernelFamily::SquaredFejer { .. } => {
                let k = self.fejer.as_ref().unwrap();
                t.iter().map(|&c| k.deriv(0, c)).product()
            }
        }
    }

    fn g1(&self, t: &[f64], j: usize) -> f64 {
        match self.family {
            KernelFamily::Gaussian { sigma } => -t[j] / (sigma * sigma) * self.g0(t),
            KernelFamily::SquaredFejer { .. } => {
                let k = self.fejer.as_ref().unwrap();
                let mut acc = k.deriv(1, t[j]);
                for (l, &c) in t.iter().enumerate() {
                    if l != j {
                        acc *= k.deriv(0, c);
                    }
                }
                acc
            }
        }
    }

    fn g2(&self, t: &[f64], i: usize, j: usize) -> f64 {
        match self.family {
            KernelFamily::Gaussian { sigma } => {
                let s2 = sigma * sigma;
                let delta = if i == j { 1.0 / s2 } else { 0.0 };
                (-delta + t[i] * t[j] / (s2 * s2)) * self.g0(t)
            }
            KernelFamily::SquaredFejer { .. } => {
                let k = self.fejer.as_ref().unwrap();
                let mut acc = if i == j {
                    k.deriv(2, t[i])
                } else {
                    k.deriv(1, t[i]) * k.deriv(1, t[j])
                };
                for (l, &c) in t.iter().enumerate() {
                    if l != i && l != j {
                        acc *= k.deriv(0, c);
                    }
                }
                acc
            }
        }
    }

    fn g3(&self, t: &[f64], i: usize, j: usize, k: usize) -> f64 {
        match self.family {
            KernelFamily::Gaussian { sigma } => {
                let s2 = sigma * sigma;
                let s4 = s2 * s2;
                let s6 = s4 * s2;
                let kron = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
                let lin = (kron(i, j) * t[k] + kron(i, k) * t[j] + kron(j, k) * t[i]) / s4;
                (lin - t[i] * t[j] * t[k] / s6) * self.g0(t)
            }
            KernelFamily::SquaredFejer { .. } => {
                let kr = self.fejer.as_ref().unwrap();
                // Group the three indices by coordinate multiplicity.
                let mut idx = [i, j, k];
                idx.sort_unstable();
                let mut acc = if idx[0] == idx[2] {
                    kr.deriv(3, t[idx[0]])
                } else if idx[0] == idx[1] {
                    kr.deriv(2, t[idx[0]]) * kr.deriv(1, t[idx[2]])
                } else if idx[1] == idx[2] {
                    kr.deriv(1, t[idx[0]]) * kr.deriv(2, t[idx[1]])
                } else {
                    kr.deriv(1, t[idx[0]]) * kr.deriv(1, t[idx[1]]) * kr.deriv(1, t[idx[2]])
                };
                for (l, &c) in t.iter().enumerate() {
                    if l != i && l != j && l != k {
                        acc *= kr.deriv(0, c);
                    }
                }
                acc
            }
        }
    }
}
