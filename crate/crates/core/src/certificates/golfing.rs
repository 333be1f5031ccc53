//! Block-randomized certificate construction with geometric defect decay.
//!
//! The features are split into candidate blocks. Block `i` proposes the
//! update `g_i = qbar^T fhat_i` with `qbar = Upsilon^{-1} q` against the
//! analytic limit system, which replaces the interpolation residual `q` by
//! `q - Upsilonhat_i qbar`. A block is kept only when three empirical
//! events hold (the first two blocks are kept unconditionally): the
//! residual contracts by the scheduled factor, the update stays small on a
//! far-region grid, and its Hessian stays bounded (first block: uniformly
//! negative against the spike signs) on grids of the near balls. Once
//! enough blocks are accepted, one solve against the full empirical system
//! removes the remaining interpolation defect exactly.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{CoveringGrid, GridRegion};
use crate::features::{adjoint_grad, adjoint_value, FeatureDraw, LipschitzBundle};
use crate::kernels::AcceptableKernelReport;
use crate::{Error, Result};

use super::certificate::{feature_coeffs, CertificateFunction};
use super::interpolation::{empirical_upsilon, InterpolationSystem};
use super::sym_eig_range;

/// Schedule of the block recursion: how many blocks to draw, how many
/// acceptances close the defect bound, and the per-block event thresholds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GolfingConfig {
    /// Accepted blocks needed for success.
    pub l: usize,
    /// Candidate blocks drawn.
    pub l_prime: usize,
    /// Features per block; the first two are double-sized.
    pub block_sizes: Vec<usize>,
    /// Residual contraction thresholds, one per block.
    pub c: Vec<f64>,
    /// Far-region sup thresholds, one per block.
    pub t: Vec<f64>,
    /// Near-ball Hessian thresholds, one per block. The first entry is the
    /// absolute curvature floor of the sign-condition variant.
    pub b: Vec<f64>,
    /// Contraction budget the schedule is derived from.
    pub delta_golf: f64,
    /// Far-region grid spacing.
    pub delta_far: f64,
    /// Near-ball grid spacing.
    pub delta_near: f64,
    /// Near-ball radius.
    pub eps_near: f64,
    /// Failure probability budget.
    pub rho: f64,
}

impl GolfingConfig {
    /// Schedule with contraction thresholds sized from the concentration
    /// constants. These demand very large draws; [`GolfingConfig::practical`]
    /// is the schedule for moderate `m`.
    pub fn theory(
        report: &AcceptableKernelReport,
        lipschitz: LipschitzBundle,
        s: usize,
        m: usize,
        rho: f64,
    ) -> Result<Self> {
        Self::schedule(report, lipschitz, s, m, rho, false)
    }

    /// Same block layout and grid thresholds, with contraction thresholds
    /// sized from matrix concentration at the realized block sizes (capped
    /// at `1/e` so the defect still decays geometrically).
    pub fn practical(
        report: &AcceptableKernelReport,
        lipschitz: LipschitzBundle,
        s: usize,
        m: usize,
        rho: f64,
    ) -> Result<Self> {
        Self::schedule(report, lipschitz, s, m, rho, true)
    }

    fn schedule(
        report: &AcceptableKernelReport,
        lip: LipschitzBundle,
        s: usize,
        m: usize,
        rho: f64,
        practical: bool,
    ) -> Result<Self> {
        if s == 0 {
            return Err(Error::EmptyInput("golfing schedule needs at least one spike"));
        }
        if s > report.s_max {
            return Err(Error::InvalidParameter(format!(
                "schedule for s = {s} spikes exceeds the report budget s_max = {}",
                report.s_max
            )));
        }
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "failure budget rho must lie in (0, 1), got {rho}"
            )));
        }
        let (eps, lam) = (report.eps_eta, report.lambda_eta);
        if !(eps > 0.0 && lam > 0.0) {
            return Err(Error::InvalidParameter(
                "kernel report does not certify positive nondegeneracy margins".into(),
            ));
        }

        let d = report.d as f64;
        let sf = s as f64;
        let sd1 = sf * (d + 1.0);
        let c0 = 2.0 * d.sqrt() * report.b_0;
        let c2 = 2.0 * d.sqrt() * report.b_2;
        let inv_e = (-1.0f64).exp();

        let l = 2.0f64
            .max((32.0 * sf * lip.l0 * lip.l01 * (d + 1.0).sqrt() / (eps * c0 * c0)).ln())
            .max((32.0 * sf * lip.l2 * lip.l01 * (d + 1.0).sqrt() / (lam * c0 * c0)).ln())
            .ceil() as usize;
        let l_prime = (3.0 * l as f64 + 0.5 * (4.0 / rho).ln()).ceil() as usize;
        let base = m / (l_prime + 2);
        if base == 0 {
            return Err(Error::InvalidParameter(format!(
                "m = {m} features cannot fill {l_prime} blocks (two double-sized)"
            )));
        }
        let mut block_sizes = vec![base; l_prime];
        block_sizes[0] = 2 * base;
        block_sizes[1] = 2 * base;

        let delta_golf = (eps / 32.0).min(report.b_0 * lam / (32.0 * report.b_2)).min(inv_e);
        let c = if practical {
            block_sizes
                .iter()
                .map(|&mi| {
                    let tail = (6.0 * sd1 * l_prime as f64 / rho).ln();
                    let fluct = (7.0 * sf * lip.l01 * lip.l01 * tail / mi as f64).sqrt();
                    (2.0 * sd1.sqrt() * fluct).min(inv_e)
                })
                .collect()
        } else {
            (0..l_prime)
                .map(|i| if i < 2 { delta_golf / (c0 * sd1.log2().sqrt()) } else { delta_golf })
                .collect()
        };
        let t = (0..l_prime)
            .map(|i| match i {
                0 => 1.0 - eps / 2.0,
                1 => 4.0 * c0,
                _ => 4.0 * c0 * sd1.log2(),
            })
            .collect();
        let b = (0..l_prime)
            .map(|i| match i {
                0 => lam / 2.0,
                1 => 4.0 * c2 * sd1.ln().sqrt(),
                _ => 4.0 * c2 * sd1.ln(),
            })
            .collect();

        let sd_sqrt = (sf * d).sqrt();
        Ok(GolfingConfig {
            l,
            l_prime,
            block_sizes,
            c,
            t,
            b,
            delta_golf,
            delta_far: eps / (16.0 * lip.l1 * lip.l01 * sd_sqrt),
            delta_near: lam / (16.0 * lip.l3 * lip.l01 * sd_sqrt),
            eps_near: report.eps_near,
            rho,
        })
    }

    fn validate(&self, m: usize) -> Result<()> {
        if self.l == 0 || self.l > self.l_prime {
            return Err(Error::InvalidParameter(format!(
                "schedule needs 1 <= l <= l_prime, got l = {}, l_prime = {}",
                self.l, self.l_prime
            )));
        }
        for (name, len) in [
            ("block_sizes", self.block_sizes.len()),
            ("c", self.c.len()),
            ("t", self.t.len()),
            ("b", self.b.len()),
        ] {
            if len != self.l_prime {
                return Err(Error::InvalidParameter(format!(
                    "{name} must have one entry per block: {len} != {}",
                    self.l_prime
                )));
            }
        }
        if self.block_sizes.contains(&0) {
            return Err(Error::InvalidParameter("empty golfing block".into()));
        }
        let total: usize = self.block_sizes.iter().sum();
        if total > m {
            return Err(Error::InvalidParameter(format!(
                "block sizes sum to {total} but the draw has only {m} features"
            )));
        }
        for (name, v) in [
            ("delta_far", self.delta_far),
            ("delta_near", self.delta_near),
            ("eps_near", self.eps_near),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Outcome of one candidate block.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlockRecord {
    /// 1-based block index.
    pub index: usize,
    pub size: usize,
    /// The residual update contracted by the scheduled factor.
    pub contraction_ok: bool,
    /// Far-region grid sup stayed within threshold.
    pub far_ok: bool,
    /// Near-ball Hessian grid bound stayed within threshold.
    pub near_ok: bool,
    pub accepted: bool,
    /// The first two blocks are kept regardless of their events.
    pub unconditional: bool,
    pub q_norm_before: f64,
    pub q_norm_after: f64,
}

/// Full record of a golfing run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GolfingTrace {
    pub blocks: Vec<BlockRecord>,
    /// 1-based indices of the accepted blocks.
    pub accepted: Vec<usize>,
    /// Acceptances needed for success (the schedule's `l`).
    pub required: usize,
    pub succeeded: bool,
    /// Max over accepted blocks of the bookkeeping defect
    /// `||q - (s - D Psi eta)||_inf`; the maintained residual must equal
    /// the interpolation defect of the running certificate.
    pub recursion_defect: f64,
    /// Interpolation defect removed by the final solve (empty on failure).
    pub correction: Vec<f64>,
    pub correction_norm: Option<f64>,
    /// `||D Psi eta - s||_inf` after correction.
    pub interpolation_defect: Option<f64>,
}

/// Runs the block recursion over `draw`, shuffling feature indices with
/// `seed`. `system` must be the full-draw empirical system for the same
/// spikes; it supplies the normalization and the final correction solve.
/// On success the returned certificate interpolates the signs exactly
/// (defect below 1e-8); on failure (`succeeded = false` in the trace) the
/// uncorrected accepted-block sum is returned for inspection.
pub fn golfing_certificate(
    draw: &FeatureDraw,
    system: &InterpolationSystem,
    config: &GolfingConfig,
    seed: u64,
) -> Result<(CertificateFunction, GolfingTrace)> {
    let map = draw.map();
    let m = draw.m();
    config.validate(m)?;
    if (map.limit_scale() - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParameter(
            "golfing requires a unit-normalized feature family (E|phi(x)|^2 = 1)".into(),
        ));
    }
    let limit_kernel = map.limit_kernel()?;
    let limit = InterpolationSystem::limit(&limit_kernel, system.positions(), system.signs())?;
    for (got, want) in system.d_norm().iter().zip(limit.d_norm()) {
        if (got - want).abs() > 1e-9 * want.abs() {
            return Err(Error::InvalidParameter(
                "system normalization does not match the family's limit kernel".into(),
            ));
        }
    }

    let domain = map.domain();
    let positions = system.positions();
    let far = domain.covering_grid(
        GridRegion::Far { centers: positions, radius: config.eps_near },
        config.delta_far,
    )?;
    let near: Vec<CoveringGrid> = positions
        .iter()
        .map(|x| {
            domain.covering_grid(
                GridRegion::NearBall { center: x, radius: config.eps_near },
                config.delta_near,
            )
        })
        .collect::<Result<_>>()?;

    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let s_vec = system.sign_vector();
    let mut q = s_vec.clone();
    let mut p = vec![Complex64::new(0.0, 0.0); m];
    let mut blocks = Vec::with_capacity(config.l_prime);
    let mut accepted = Vec::new();
    let mut recursion_defect = 0.0f64;
    let mut start = 0usize;

    for i in 1..=config.l_prime {
        let size = config.block_sizes[i - 1];
        let block = &order[start..start + size];
        start += size;

        let q_norm = q.amax();
        let q_bar = limit.solve(&q)?;
        let ups_block = empirical_upsilon(draw, block, positions, system.d_norm());
        let q_next = &q - &ups_block * &q_bar;
        let contraction_ok = q_next.amax() <= config.c[i - 1] * q_norm;

        let field = BlockField::new(draw, system, block, &q_bar);
        let far_ok = field.sup_abs(&far.points) <= config.t[i - 1] * q_norm;
        let near_ok = if i == 1 {
            // Sign-condition variant: the opening block must already be
            // uniformly concave against the spike signs (absolute threshold;
            // the initial residual has unit norm).
            near.iter()
                .zip(system.signs())
                .all(|(grid, &sg)| field.max_signed_top_eig(&grid.points, sg) <= -config.b[0])
        } else {
            near.iter().all(|grid| field.sup_op_norm(&grid.points) <= config.b[i - 1] * q_norm)
        };

        let unconditional = i <= 2;
        let accept = unconditional || (contraction_ok && far_ok && near_ok);
        if accept {
            let boost = m as f64 / size as f64;
            for (&k, z) in block.iter().zip(&field.zeta) {
                p[k] += boost * z.conj();
            }
            q = q_next;
            accepted.push(i);
            let psi = system.psi_weighted(
                |x| adjoint_value(draw, &p, x),
                |x| adjoint_grad(draw, &p, x),
            )?;
            let defect = (&q - (&s_vec - &psi)).amax();
            recursion_defect = recursion_defect.max(defect);
        }
        blocks.push(BlockRecord {
            index: i,
            size,
            contraction_ok,
            far_ok,
            near_ok,
            accepted: accept,
            unconditional,
            q_norm_before: q_norm,
            q_norm_after: q.amax(),
        });
    }

    let succeeded = accepted.len() >= config.l;
    let mut correction = Vec::new();
    let mut correction_norm = None;
    let mut interpolation_defect = None;
    if succeeded {
        let psi = system
            .psi_weighted(|x| adjoint_value(draw, &p, x), |x| adjoint_grad(draw, &p, x))?;
        let e = &psi - &s_vec;
        let c_e = system.solve(&e)?;
        for (pk, ck) in p.iter_mut().zip(feature_coeffs(system, draw, &c_e)) {
            *pk -= ck;
        }
        let psi_after = system
            .psi_weighted(|x| adjoint_value(draw, &p, x), |x| adjoint_grad(draw, &p, x))?;
        let defect = (&psi_after - &s_vec).amax();
        if defect > 1e-8 {
            return Err(Error::Numerical(format!(
                "correction solve left interpolation defect {defect:.3e}"
            )));
        }
        correction = e.iter().copied().collect();
        correction_norm = Some(e.norm());
        interpolation_defect = Some(defect);
    }

    let trace = GolfingTrace {
        blocks,
        accepted,
        required: config.l,
        succeeded,
        recursion_defect,
        correction,
        correction_norm,
        interpolation_defect,
    };
    Ok((CertificateFunction::from_features(draw.clone(), p), trace))
}

/// Block update `g(x) = (1/|block|) sum_k Re[zeta_k phi_k(x)]` with
/// `zeta_k = qbar^T gamma(omega_k)`, evaluated through amplitude-folded
/// coefficients so grid scans cost one `sin_cos` per feature.
struct BlockField<'a> {
    draw: &'a FeatureDraw,
    block: &'a [usize],
    /// `zeta_k`, kept for the certificate coefficient update.
    zeta: Vec<Complex64>,
    /// `zeta_k * w(omega_k)`.
    zw: Vec<Complex64>,
    scale: f64,
    dim: usize,
}

impl<'a> BlockField<'a> {
    fn new(
        draw: &'a FeatureDraw,
        system: &InterpolationSystem,
        block: &'a [usize],
        q_bar: &DVector<f64>,
    ) -> Self {
        let map = draw.map();
        let zeta: Vec<Complex64> = block
            .iter()
            .map(|&k| {
                let gamma = system.gamma(map, draw.omega(k));
                gamma.iter().zip(q_bar.iter()).map(|(g, c)| g * *c).sum()
            })
            .collect();
        let zw = block
            .iter()
            .zip(&zeta)
            .map(|(&k, z)| z * map.amplitude(draw.omega(k)))
            .collect();
        BlockField { draw, block, zeta, zw, scale: map.wave_scale(), dim: map.domain().dim() }
    }

    fn value(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (&k, z) in self.block.iter().zip(&self.zw) {
            let theta = self.scale * dot(self.draw.omega(k), x);
            let (sin, cos) = theta.sin_cos();
            acc += z.re * cos - z.im * sin;
        }
        acc / self.block.len() as f64
    }

    fn hess(&self, x: &[f64]) -> DMatrix<f64> {
        let d = self.dim;
        let mut acc = DMatrix::zeros(d, d);
        for (&k, z) in self.block.iter().zip(&self.zw) {
            let omega = self.draw.omega(k);
            let theta = self.scale * dot(omega, x);
            let (sin, cos) = theta.sin_cos();
            let re = z.re * cos - z.im * sin;
            for i in 0..d {
                for j in 0..d {
                    acc[(i, j)] -= re * (self.scale * omega[i]) * (self.scale * omega[j]);
                }
            }
        }
        acc / self.block.len() as f64
    }

    fn sup_abs(&self, points: &[Vec<f64>]) -> f64 {
        points.par_iter().map(|x| self.value(x).abs()).reduce(|| 0.0, f64::max)
    }

    fn sup_op_norm(&self, points: &[Vec<f64>]) -> f64 {
        points
            .par_iter()
            .map(|x| {
                let (lo, hi) = sym_eig_range(&self.hess(x));
                lo.abs().max(hi.abs())
            })
            .reduce(|| 0.0, f64::max)
    }

    fn max_signed_top_eig(&self, points: &[Vec<f64>], sign: f64) -> f64 {
        points
            .par_iter()
            .map(|x| sym_eig_range(&(self.hess(x) * sign)).1)
            .reduce(|| f64::NEG_INFINITY, f64::max)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Domain, SepNorm};
    use crate::features::{draw_features, FeatureFamily, FeatureMap};
    use crate::kernels::{acceptable_report, KernelFamily, KernelModel};

    struct Setup {
        report: AcceptableKernelReport,
        lip: LipschitzBundle,
        draw: FeatureDraw,
        system: InterpolationSystem,
    }

    /// Gaussian limit kernel, weighted Fourier features, two spikes at
    /// 1.5x the scheduled separation.
    fn setup(m: usize, seed: u64) -> Setup {
        let dom = Domain::cube(1, 8.0, SepNorm::L2).unwrap();
        let kernel = KernelModel::new(KernelFamily::Gaussian { sigma: 1.0 }, dom.clone()).unwrap();
        let report = acceptable_report(&kernel, 2, None).unwrap();
        let map =
            FeatureMap::new(FeatureFamily::WeightedGaussianFourier { sigma: 1.0 }, dom).unwrap();
        let lip = map.lipschitz();
        let draw = draw_features(&map, m, seed).unwrap();
        let half = 0.75 * report.delta_sep;
        let positions = vec![vec![-half], vec![half]];
        let signs = vec![1.0, -1.0];
        let system = InterpolationSystem::empirical(&draw, &positions, &signs).unwrap();
        Setup { report, lip, draw, system }
    }

    #[test]
    fn schedules_match_hand_evaluated_formulas() {
        // Frozen from evaluating the schedule formulas by hand at
        // sigma = 1, d = 1, s = s_max = 2, m = 1e4, rho = 0.05.
        let s = setup(64, 1);
        let practical = GolfingConfig::practical(&s.report, s.lip, 2, 10_000, 0.05).unwrap();
        assert_eq!(practical.l, 8);
        assert_eq!(practical.l_prime, 27);
        assert_eq!(practical.block_sizes[0], 688);
        assert_eq!(practical.block_sizes[1], 688);
        assert_eq!(practical.block_sizes[2], 344);
        assert_eq!(practical.block_sizes.iter().sum::<usize>(), 9976);

        let rel = |got: f64, want: f64| (got / want - 1.0).abs();
        // At these block sizes the concentration estimate exceeds 1/e, so
        // every contraction threshold sits at the cap.
        let inv_e = (-1.0f64).exp();
        assert!(practical.c.iter().all(|&c| (c - inv_e).abs() < 1e-15));
        assert!(rel(practical.t[0], 0.914358) < 1e-4, "t1 = {}", practical.t[0]);
        assert!(rel(practical.t[1], 7.95980) < 1e-4, "t2 = {}", practical.t[1]);
        assert!(rel(practical.t[26], 15.91960) < 1e-4);
        assert!(rel(practical.b[0], 0.0400480) < 1e-4, "b1 = {}", practical.b[0]);
        assert!(rel(practical.b[1], 29.2744) < 1e-3, "b2 = {}", practical.b[1]);
        assert!(rel(practical.b[26], 34.4718) < 1e-3);
        assert!(rel(practical.delta_far, 1.338163e-3) < 1e-4);
        assert!(rel(practical.delta_near, 1.61551e-4) < 1e-3);
        assert!((practical.eps_near - 0.5f64.sqrt()).abs() < 1e-15);

        let theory = GolfingConfig::theory(&s.report, s.lip, 2, 10_000, 0.05).unwrap();
        assert_eq!(theory.l, 8);
        assert_eq!(theory.block_sizes, practical.block_sizes);
        assert_eq!(theory.t, practical.t);
        assert_eq!(theory.b, practical.b);
        assert!(rel(theory.delta_golf, 8.01303e-4) < 1e-3);
        assert!(rel(theory.c[0], 2.84738e-4) < 1e-3, "c1 = {}", theory.c[0]);
        assert!((theory.c[1] - theory.c[0]).abs() < 1e-18);
        assert!((theory.c[2] - theory.delta_golf).abs() < 1e-18);
    }

    #[test]
    fn schedule_rejects_bad_inputs() {
        let s = setup(64, 2);
        assert!(matches!(
            GolfingConfig::practical(&s.report, s.lip, 0, 10_000, 0.05),
            Err(Error::EmptyInput(_))
        ));
        assert!(matches!(
            GolfingConfig::practical(&s.report, s.lip, 3, 10_000, 0.05),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            GolfingConfig::practical(&s.report, s.lip, 2, 10_000, 1.5),
            Err(Error::InvalidParameter(_))
        ));
        // 27 blocks cannot be filled from 10 features.
        assert!(matches!(
            GolfingConfig::practical(&s.report, s.lip, 2, 10, 0.05),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn run_rejects_inconsistent_configs() {
        let s = setup(400, 3);
        let mut config = GolfingConfig::practical(&s.report, s.lip, 2, 10_000, 0.05).unwrap();
        // Sizes were laid out for m = 1e4 but the draw has 400 features.
        assert!(matches!(
            golfing_certificate(&s.draw, &s.system, &config, 0),
            Err(Error::InvalidParameter(_))
        ));
        config = GolfingConfig::practical(&s.report, s.lip, 2, 400, 0.05).unwrap();
        config.c.truncate(5);
        assert!(matches!(
            golfing_certificate(&s.draw, &s.system, &config, 0),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn unnormalized_families_are_rejected() {
        let dom = Domain::cube(1, 8.0, SepNorm::L2).unwrap();
        let map = FeatureMap::new(FeatureFamily::GmmCharacteristic { sigma_c: 1.0 }, dom.clone())
            .unwrap();
        let draw = draw_features(&map, 200, 11).unwrap();
        let positions = vec![vec![-4.0], vec![4.0]];
        let signs = vec![1.0, -1.0];
        let system = InterpolationSystem::empirical(&draw, &positions, &signs).unwrap();

        let kernel = KernelModel::new(KernelFamily::Gaussian { sigma: 1.0 }, dom).unwrap();
        let report = acceptable_report(&kernel, 2, None).unwrap();
        let config = GolfingConfig::practical(&report, map.lipschitz(), 2, 200, 0.05).unwrap();
        match golfing_certificate(&draw, &system, &config, 0) {
            Err(Error::InvalidParameter(msg)) => assert!(msg.contains("normalized")),
            other => panic!("expected the normalization guard, got {other:?}"),
        }
    }

    #[test]
    fn failed_runs_return_the_uncorrected_state() {
        // Unreachable contraction thresholds reject every conditional
        // block, leaving only the two unconditional ones.
        let s = setup(300, 0xFA11);
        let mut config = GolfingConfig::practical(&s.report, s.lip, 2, 300, 0.05).unwrap();
        for c in config.c.iter_mut().skip(2) {
            *c = 1e-12;
        }
        let (cert, trace) = golfing_certificate(&s.draw, &s.system, &config, 5).unwrap();
        assert!(!trace.succeeded);
        assert!(trace.accepted.len() < trace.required);
        assert!(trace.interpolation_defect.is_none());
        assert!(trace.correction.is_empty());
        assert!(trace.blocks[0].accepted && trace.blocks[0].unconditional);
        assert!(trace.blocks[1].accepted && trace.blocks[1].unconditional);
        // The partial certificate still evaluates.
        assert!(cert.value(&[0.0]).unwrap().is_finite());
    }

    #[test]
    fn golfing_builds_an_exactly_interpolating_certificate() {
        let s = setup(10_000, 0x601F);
        let config = GolfingConfig::practical(&s.report, s.lip, 2, 10_000, 0.05).unwrap();
        let (cert, trace) = golfing_certificate(&s.draw, &s.system, &config, 7).unwrap();

        assert!(trace.succeeded, "accepted {} of {}", trace.accepted.len(), trace.required);
        assert!(trace.accepted.len() >= trace.required);
        assert_eq!(trace.blocks.len(), config.l_prime);
        // The maintained residual must equal the running certificate's
        // interpolation defect up to accumulation roundoff.
        assert!(trace.recursion_defect <= 1e-10, "defect {}", trace.recursion_defect);
        assert!(trace.interpolation_defect.unwrap() <= 1e-8);
        assert!(trace.correction_norm.unwrap() > 0.0);
        assert_eq!(trace.correction.len(), s.system.size());

        // Geometric decay: with most blocks accepted the residual is tiny
        // well before the correction step.
        let last = trace.blocks.iter().rfind(|b| b.accepted).unwrap();
        assert!(last.q_norm_after <= 1e-4, "final residual {}", last.q_norm_after);
        for b in &trace.blocks {
            if b.accepted && !b.unconditional {
                assert!(b.contraction_ok && b.far_ok && b.near_ok);
                assert!(b.q_norm_after <= config.c[b.index - 1] * b.q_norm_before);
            }
            if !b.accepted {
                assert!(!(b.contraction_ok && b.far_ok && b.near_ok));
            }
        }

        // Exact sign interpolation with flat gradients after correction.
        for (x, sg) in s.system.positions().iter().zip(s.system.signs()) {
            assert!((cert.value(x).unwrap() - sg).abs() <= 1e-8);
            let gnorm = cert.grad(x).unwrap().iter().map(|g| g * g).sum::<f64>().sqrt();
            assert!(gnorm <= 1e-6, "gradient norm {gnorm}");
        }

        // Trace serializes and round-trips.
        let json = serde_json::to_string(&trace).unwrap();
        let back: GolfingTrace = serde_json::from_str(&json).unwrap();
        assert_eq!(back.accepted, trace.accepted);
        assert_eq!(back.blocks.len(), trace.blocks.len());
    }
}
