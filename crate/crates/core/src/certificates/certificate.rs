//! Dual-certificate functions: evaluation oracles over either a feature
//! representation (`Phi* p`) or a kernel expansion, and the closed-form
//! vanishing-derivative pre-certificate.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::features::{
    adjoint_grad, adjoint_hess, adjoint_value, FeatureDraw,
};
use crate::kernels::KernelModel;
use crate::{Error, Result};

use super::interpolation::InterpolationSystem;

#[derive(Clone, Debug)]
enum Repr {
    /// `eta = Phi* p` over a realized feature draw.
    Features { draw: FeatureDraw, p: Vec<Complex64> },
    /// `eta(x) = sum_l alpha_l K(x_l, x) + <beta_l, grad_1 K(x_l, x)>`.
    Kernel {
        kernel: KernelModel,
        positions: Vec<Vec<f64>>,
        alpha: Vec<f64>,
        beta: Vec<Vec<f64>>,
    },
}

/// A certificate candidate with value, gradient, and Hessian oracles.
#[derive(Clone, Debug)]
pub struct CertificateFunction {
    repr: Repr,
}

impl CertificateFunction {
    pub(crate) fn from_features(draw: FeatureDraw, p: Vec<Complex64>) -> Self {
        CertificateFunction { repr: Repr::Features { draw, p } }
    }

    pub(crate) fn from_kernel_parts(
        kernel: KernelModel,
        positions: Vec<Vec<f64>>,
        alpha: Vec<f64>,
        beta: Vec<Vec<f64>>,
    ) -> Self {
        CertificateFunction { repr: Repr::Kernel { kernel, positions, alpha, beta } }
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        match &self.repr {
            Repr::Features { draw, p } => adjoint_value(draw, p, x),
            Repr::Kernel { kernel, positions, alpha, beta } => {
                kernel.domain().check_dim(x)?;
                let mut acc = 0.0;
                for (l, xl) in positions.iter().enumerate() {
                    acc += alpha[l] * kernel.value(xl, x);
                    let g1 = kernel.grad1(xl, x);
                    acc += beta[l].iter().zip(&g1).map(|(b, g)| b * g).sum::<f64>();
                }
                Ok(acc)
            }
        }
    }

    pub fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.repr {
            Repr::Features { draw, p } => adjoint_grad(draw, p, x),
            Repr::Kernel { kernel, positions, alpha, beta } => {
                kernel.domain().check_dim(x)?;
                let d = x.len();
                let mut acc = vec![0.0; d];
                for (l, xl) in positions.iter().enumerate() {
                    let g2 = kernel.grad2(xl, x);
                    let mixed = kernel.d1d2(xl, x);
                    for (j, a) in acc.iter_mut().enumerate() {
                        *a += alpha[l] * g2[j];
                        for (i, b) in beta[l].iter().enumerate() {
                            *a += b * mixed[(i, j)];
                        }
                    }
                }
                Ok(acc)
            }
        }
    }

    pub fn hess(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        match &self.repr {
            Repr::Features { draw, p } => adjoint_hess(draw, p, x),
            Repr::Kernel { kernel, positions, alpha, beta } => {
                kernel.domain().check_dim(x)?;
                let d = x.len();
                let mut acc = DMatrix::zeros(d, d);
                for (l, xl) in positions.iter().enumerate() {
                    acc += kernel.hess2(xl, x) * alpha[l];
                    for (i, b) in beta[l].iter().enumerate() {
                        acc += kernel.d1_hess2(i, xl, x) * *b;
                    }
                }
                Ok(acc)
            }
        }
    }

    /// Norm of the realizing feature coefficients in the measurement inner
    /// product, `sqrt((1/m) sum |p_k|^2)`; `None` for kernel expansions.
    pub fn p_norm(&self) -> Option<f64> {
        match &self.repr {
            Repr::Features { draw, p } => {
                Some((p.iter().map(|v| v.norm_sqr()).sum::<f64>() / draw.m() as f64).sqrt())
            }
            Repr::Kernel { .. } => None,
        }
    }

    /// The feature coefficients when feature-represented.
    pub fn feature_coeffs(&self) -> Option<&[Complex64]> {
        match &self.repr {
            Repr::Features { p, .. } => Some(p),
            Repr::Kernel { .. } => None,
        }
    }

    /// The kernel expansion `(alpha, beta)` when kernel-represented.
    pub fn kernel_coeffs(&self) -> Option<(&[f64], &[Vec<f64>])> {
        match &self.repr {
            Repr::Features { .. } => None,
            Repr::Kernel { alpha, beta, .. } => Some((alpha, beta)),
        }
    }

    /// Writes sampled certificate values as CSV: one row per point with the
    /// coordinates, `eta`, and (optionally) the largest Hessian eigenvalue.
    pub fn export_csv<W: Write>(
        &self,
        points: &[Vec<f64>],
        with_hessian: bool,
        mut out: W,
    ) -> Result<()> {
        let io_err = |e: std::io::Error| Error::Serialization(format!("csv write: {e}"));
        let d = points.first().map_or(0, Vec::len);
        let mut header: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
        header.push("eta".into());
        if with_hessian {
            header.push("hess_max_eig".into());
        }
        writeln!(out, "{}", header.join(",")).map_err(io_err)?;
        for x in points {
            let mut row: Vec<String> = x.iter().map(f64::to_string).collect();
            row.push(self.value(x)?.to_string());
            if with_hessian {
                let top = self
                    .hess(x)?
                    .symmetric_eigenvalues()
                    .iter()
                    .fold(f64::NEG_INFINITY, |m, &l| m.max(l));
                row.push(top.to_string());
            }
            writeln!(out, "{}", row.join(",")).map_err(io_err)?;
        }
        Ok(())
    }
}

/// What realizes the certificate: a feature draw or an analytic kernel.
/// Must be the same object the system was assembled from.
pub enum CertificateSource<'a> {
    Empirical(&'a FeatureDraw),
    Limit(&'a KernelModel),
}

/// The vanishing-derivative pre-certificate: the minimal-coefficient
/// function interpolating `eta(x_i) = sign(a_i)`, `grad eta(x_i) = 0`.
pub fn build_pre_certificate(
    system: &InterpolationSystem,
    source: CertificateSource<'_>,
) -> Result<CertificateFunction> {
    solve_to_certificate(system, &system.sign_vector(), source)
}

/// Certificate-shaped solve against an arbitrary right-hand side: returns
/// the function `(Upsilon^{-1} rhs)^T f(.)` in the source's representation.
pub(crate) fn solve_to_certificate(
    system: &InterpolationSystem,
    rhs: &DVector<f64>,
    source: CertificateSource<'_>,
) -> Result<CertificateFunction> {
    let c = system.solve(rhs)?;
    Ok(match source {
        CertificateSource::Empirical(draw) => {
            CertificateFunction::from_features(draw.clone(), feature_coeffs(system, draw, &c))
        }
        CertificateSource::Limit(kernel) => {
            let (s, d) = (system.s(), system.dim());
            let alpha: Vec<f64> = (0..s).map(|l| c[l]).collect();
            let beta: Vec<Vec<f64>> = (0..s)
                .map(|l| {
                    (0..d).map(|i| c[s + l * d + i] * system.d_norm()[s + l * d + i]).collect()
                })
                .collect();
            CertificateFunction::from_kernel_parts(
                kernel.clone(),
                system.positions().to_vec(),
                alpha,
                beta,
            )
        }
    })
}

/// Feature coefficients realizing `c^T f_hat(.) = Phi* p`:
/// `p_k = conj(c^T gamma(omega_k))`.
pub(crate) fn feature_coeffs(
    system: &InterpolationSystem,
    draw: &FeatureDraw,
    c: &DVector<f64>,
) -> Vec<Complex64> {
    (0..draw.m())
        .map(|k| {
            let gamma = system.gamma(draw.map(), draw.omega(k));
            gamma.iter().zip(c.iter()).map(|(g, ci)| g * *ci).sum::<Complex64>().conj()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Domain, SepNorm};
    use crate::features::{draw_features, FeatureFamily, FeatureMap};
    use crate::kernels::KernelFamily;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gaussian_setup(d: usize) -> (KernelModel, FeatureMap) {
        let dom = Domain::cube(d, 8.0, SepNorm::L2).unwrap();
        let kernel = KernelModel::new(KernelFamily::Gaussian { sigma: 1.0 }, dom.clone()).unwrap();
        let map =
            FeatureMap::new(FeatureFamily::WeightedGaussianFourier { sigma: 1.0 }, dom).unwrap();
        (kernel, map)
    }

    #[test]
    fn single_spike_limit_certificate_is_the_kernel() {
        let (kernel, _) = gaussian_setup(1);
        let positions = vec![vec![0.5]];
        let sys = InterpolationSystem::limit(&kernel, &positions, &[1.0]).unwrap();
        let cert = build_pre_certificate(&sys, CertificateSource::Limit(&kernel)).unwrap();
        let (alpha, beta) = cert.kernel_coeffs().unwrap();
        assert!((alpha[0] - 1.0).abs() < 1e-12);
        assert!(beta[0][0].abs() < 1e-12);
        for x in [[0.5], [0.0], [2.0]] {
            let want = kernel.value(&[0.5], &x);
            assert!((cert.value(&x).unwrap() - want).abs() < 1e-12);
        }
        // Strictly negative curvature at the spike.
        assert!(cert.hess(&[0.5]).unwrap()[(0, 0)] < -0.5);
        assert!(cert.p_norm().is_none());
    }

    #[test]
    fn empirical_certificate_interpolates_signs_with_flat_gradient() {
        let (_, map) = gaussian_setup(1);
        let positions = vec![vec![-3.0], vec![0.2], vec![3.5]];
        let signs = vec![1.0, -1.0, 1.0];
        let draw = draw_features(&map, 2000, 0xBEEF).unwrap();
        let sys = InterpolationSystem::empirical(&draw, &positions, &signs).unwrap();
        let cert = build_pre_certificate(&sys, CertificateSource::Empirical(&draw)).unwrap();
        for (x, sg) in positions.iter().zip(&signs) {
            assert!((cert.value(x).unwrap() - sg).abs() <= 1e-8);
            let gnorm =
                cert.grad(x).unwrap().iter().map(|g| g * g).sum::<f64>().sqrt();
            assert!(gnorm <= 1e-6, "gradient norm {gnorm}");
        }
        assert!(cert.p_norm().unwrap() > 0.0);
        // The coefficient norm matches its definition.
        let p = cert.feature_coeffs().unwrap();
        let manual =
            (p.iter().map(|v| v.norm_sqr()).sum::<f64>() / draw.m() as f64).sqrt();
        assert!((cert.p_norm().unwrap() - manual).abs() < 1e-15);
    }

    #[test]
    fn interpolation_operator_identity_holds_in_both_representations() {
        // For any q, the function (Upsilon^{-1} q)^T f(.) reads back as
        // D^{-1} q under the raw interpolation operator.
        let (kernel, map) = gaussian_setup(2);
        let positions = vec![vec![-3.0, -2.0], vec![0.0, 0.5], vec![3.0, 2.5]];
        let signs = vec![1.0, 1.0, -1.0];
        let draw = draw_features(&map, 4000, 0xABCD).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);

        let lim = InterpolationSystem::limit(&kernel, &positions, &signs).unwrap();
        let emp = InterpolationSystem::empirical(&draw, &positions, &signs).unwrap();
        let cases: [(&InterpolationSystem, CertificateSource<'_>); 2] = [
            (&lim, CertificateSource::Limit(&kernel)),
            (&emp, CertificateSource::Empirical(&draw)),
        ];
        for (sys, source) in cases {
            let q = DVector::from_fn(sys.size(), |_, _| rng.gen::<f64>() - 0.5);
            let g = solve_to_certificate(sys, &q, source).unwrap();
            let psi = sys.psi_raw(|x| g.value(x), |x| g.grad(x)).unwrap();
            for i in 0..sys.size() {
                let want = q[i] / sys.d_norm()[i];
                assert!(
                    (psi[i] - want).abs() <= 1e-8 * want.abs().max(1.0),
                    "entry {i}: psi={}, want={want}",
                    psi[i]
                );
            }
        }
    }

    #[test]
    fn certificate_is_invariant_to_gradient_normalization() {
        let (_, map) = gaussian_setup(1);
        let positions = vec![vec![-2.0], vec![2.0]];
        let signs = vec![1.0, -1.0];
        let draw = draw_features(&map, 1500, 0x1D).unwrap();
        let sys = InterpolationSystem::empirical(&draw, &positions, &signs).unwrap();
        let mut scaled_norm = sys.d_norm().to_vec();
        for w in scaled_norm.iter_mut().skip(positions.len()) {
            *w *= 3.0;
        }
        let scaled =
            InterpolationSystem::empirical_with_norm(&draw, &positions, &signs, scaled_norm)
                .unwrap();
        let cert = build_pre_certificate(&sys, CertificateSource::Empirical(&draw)).unwrap();
        let cert_scaled =
            build_pre_certificate(&scaled, CertificateSource::Empirical(&draw)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let x = [(rng.gen::<f64>() - 0.5) * 10.0];
            let a = cert.value(&x).unwrap();
            let b = cert_scaled.value(&x).unwrap();
            assert!((a - b).abs() <= 1e-10, "x={:?}: {a} vs {b}", x);
        }
    }

    #[test]
    fn csv_export_writes_expected_shape() {
        let (kernel, _) = gaussian_setup(1);
        let sys = InterpolationSystem::limit(&kernel, &[vec![0.0]], &[1.0]).unwrap();
        let cert = build_pre_certificate(&sys, CertificateSource::Limit(&kernel)).unwrap();
        let points = vec![vec![-1.0], vec![0.0], vec![1.0]];
        let mut buf = Vec::new();
        cert.export_csv(&points, true, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x0,eta,hess_max_eig");
        assert_eq!(lines.len(), 4);
        assert!(lines[2].starts_with("0,1"));
    }
}
