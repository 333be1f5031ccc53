//! The interpolation system behind dual certificates: the normalized
//! moment matrix (limit or empirical), its factorization, and the
//! interpolation operator that reads values and gradients at the spikes.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::domain::Domain;
use crate::features::{feature_grad, feature_value, FeatureDraw, FeatureMap};
use crate::kernels::KernelModel;
use crate::{Error, Result};

/// Condition-number ceiling above which a system is rejected as singular.
const COND_CAP: f64 = 1e12;

/// The linear system whose solution interpolates prescribed signs with
/// vanishing gradients at the spike positions.
///
/// Rows and columns are indexed value-block first: entry `l < s` is the
/// value at spike `l`, entry `s + l*d + i` is coordinate `i` of the
/// gradient at spike `l`, scaled by the normalization `D` so that the
/// limit matrix has unit diagonal for unit-normalized families.
#[derive(Clone, Debug)]
pub struct InterpolationSystem {
    positions: Vec<Vec<f64>>,
    signs: Vec<f64>,
    /// Diagonal of `D`: first `s` entries 1, gradient entries
    /// `1/sqrt(d1d2 K(x_l, x_l)[i,i])` of the (scaled) limit kernel.
    d_norm: Vec<f64>,
    upsilon: DMatrix<f64>,
    inverse: DMatrix<f64>,
    cond: f64,
}

impl InterpolationSystem {
    /// Builds the limit system from analytic kernel derivative blocks.
    pub fn limit(kernel: &KernelModel, positions: &[Vec<f64>], signs: &[f64]) -> Result<Self> {
        validate_spikes(kernel.domain(), positions, signs)?;
        let d_norm = normalization(kernel, 1.0, positions);
        let upsilon = limit_upsilon(kernel, positions, &d_norm);
        Self::assemble(positions, signs, d_norm, upsilon)
    }

    /// Builds the empirical system `(1/m) sum_k Re[gamma_k gamma_k^H]` from
    /// a feature draw, with `D` taken from the family's limit kernel.
    pub fn empirical(draw: &FeatureDraw, positions: &[Vec<f64>], signs: &[f64]) -> Result<Self> {
        let map = draw.map();
        validate_spikes(map.domain(), positions, signs)?;
        let limit = map.limit_kernel()?;
        let d_norm = normalization(&limit, map.limit_scale(), positions);
        Self::empirical_with_norm(draw, positions, signs, d_norm)
    }

    /// Empirical system with an explicit normalization diagonal. The
    /// certificate function is invariant to the gradient-block entries,
    /// which this constructor exists to demonstrate; [`Self::empirical`]
    /// is the standard entry point.
    pub(crate) fn empirical_with_norm(
        draw: &FeatureDraw,
        positions: &[Vec<f64>],
        signs: &[f64],
        d_norm: Vec<f64>,
    ) -> Result<Self> {
        let indices: Vec<usize> = (0..draw.m()).collect();
        let upsilon = empirical_upsilon(draw, &indices, positions, &d_norm);
        Self::assemble(positions, signs, d_norm, upsilon)
    }

    fn assemble(
        positions: &[Vec<f64>],
        signs: &[f64],
        d_norm: Vec<f64>,
        mut upsilon: DMatrix<f64>,
    ) -> Result<Self> {
        // The matrix is symmetric up to assembly roundoff; make it exact so
        // the symmetric eigensolver sees what the theory describes.
        let n = upsilon.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (upsilon[(i, j)] + upsilon[(j, i)]);
                upsilon[(i, j)] = avg;
                upsilon[(j, i)] = avg;
            }
        }
        let eig = SymmetricEigen::new(upsilon.clone());
        let max = eig.eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l.abs()));
        let min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, &l| m.min(l.abs()));
        let cond = if min > 0.0 { max / min } else { f64::INFINITY };
        if !cond.is_finite() || cond >= COND_CAP {
            return Err(Error::IllConditioned { cond });
        }
        let mut inv_vals = eig.eigenvalues.clone();
        for v in inv_vals.iter_mut() {
            *v = 1.0 / *v;
        }
        let inverse = &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
        Ok(InterpolationSystem {
            positions: positions.to_vec(),
            signs: signs.to_vec(),
            d_norm,
            upsilon,
            inverse,
            cond,
        })
    }

    pub fn s(&self) -> usize {
        self.positions.len()
    }

    pub fn dim(&self) -> usize {
        self.positions[0].len()
    }

    /// System size `s(d+1)`.
    pub fn size(&self) -> usize {
        self.d_norm.len()
    }

    pub fn positions(&self) -> &[Vec<f64>] {
        &self.positions
    }

    pub fn signs(&self) -> &[f64] {
        &self.signs
    }

    pub fn d_norm(&self) -> &[f64] {
        &self.d_norm
    }

    pub fn upsilon(&self) -> &DMatrix<f64> {
        &self.upsilon
    }

    /// Condition number estimate from the symmetric eigendecomposition.
    pub fn cond(&self) -> f64 {
        self.cond
    }

    /// Right-hand side `(sign(a_1)..sign(a_s), 0, .., 0)`.
    pub fn sign_vector(&self) -> DVector<f64> {
        let mut rhs = DVector::zeros(self.size());
        for (i, &sg) in self.signs.iter().enumerate() {
            rhs[i] = sg;
        }
        rhs
    }

    /// Solves the system with one step of iterative refinement on the
    /// spectral inverse.
    pub fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        if rhs.len() != self.size() {
            return Err(Error::DimensionMismatch { expected: self.size(), got: rhs.len() });
        }
        let mut x = &self.inverse * rhs;
        let r = rhs - &self.upsilon * &x;
        x += &self.inverse * r;
        Ok(x)
    }

    /// Raw interpolation data of a function: values at the spikes followed
    /// by the stacked gradients.
    pub fn psi_raw(
        &self,
        mut value: impl FnMut(&[f64]) -> Result<f64>,
        mut grad: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<DVector<f64>> {
        let (s, d) = (self.s(), self.dim());
        let mut out = DVector::zeros(self.size());
        for (l, x) in self.positions.iter().enumerate() {
            out[l] = value(x)?;
            let g = grad(x)?;
            for (i, gi) in g.iter().enumerate() {
                out[s + l * d + i] = *gi;
            }
        }
        Ok(out)
    }

    /// `D`-weighted interpolation data `D Psi(g)`.
    pub fn psi_weighted(
        &self,
        value: impl FnMut(&[f64]) -> Result<f64>,
        grad: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<DVector<f64>> {
        let mut out = self.psi_raw(value, grad)?;
        for (o, w) in out.iter_mut().zip(&self.d_norm) {
            *o *= w;
        }
        Ok(out)
    }

    /// The normalized feature moment vector
    /// `gamma(omega) = D (conj phi(x_1), .., conj grad phi(x_s)^T)^T`.
    pub(crate) fn gamma(&self, map: &FeatureMap, omega: &[f64]) -> Vec<Complex64> {
        let (s, d) = (self.s(), self.dim());
        let mut out = vec![Complex64::new(0.0, 0.0); self.size()];
        for (l, x) in self.positions.iter().enumerate() {
            out[l] = feature_value(map, omega, x).conj();
            for (i, g) in feature_grad(map, omega, x).iter().enumerate() {
                out[s + l * d + i] = self.d_norm[s + l * d + i] * g.conj();
            }
        }
        out
    }
}

fn validate_spikes(domain: &Domain, positions: &[Vec<f64>], signs: &[f64]) -> Result<()> {
    if positions.is_empty() {
        return Err(Error::EmptyInput("interpolation system needs at least one spike"));
    }
    if signs.len() != positions.len() {
        return Err(Error::DimensionMismatch { expected: positions.len(), got: signs.len() });
    }
    for x in positions {
        domain.check_dim(x)?;
    }
    for &sg in signs {
        if sg != 1.0 && sg != -1.0 {
            return Err(Error::InvalidParameter(format!(
                "spike signs must be +1 or -1, got {sg}"
            )));
        }
    }
    Ok(())
}

/// Normalization diagonal: 1 on the value block,
/// `1/sqrt(scale * d1d2 K(x_l,x_l)[i,i])` on gradient entries. `scale` is
/// `E |phi|^2` so the entries reflect the family's true limit covariance.
fn normalization(kernel: &KernelModel, scale: f64, positions: &[Vec<f64>]) -> Vec<f64> {
    let (s, d) = (positions.len(), positions[0].len());
    let mut d_norm = vec![1.0; s * (d + 1)];
    for (l, x) in positions.iter().enumerate() {
        let curv = kernel.d1d2(x, x);
        for i in 0..d {
            d_norm[s + l * d + i] = 1.0 / (scale * curv[(i, i)]).sqrt();
        }
    }
    d_norm
}

fn limit_upsilon(kernel: &KernelModel, positions: &[Vec<f64>], d_norm: &[f64]) -> DMatrix<f64> {
    let (s, d) = (positions.len(), positions[0].len());
    let n = s * (d + 1);
    let mut u = DMatrix::zeros(n, n);
    for (l, xl) in positions.iter().enumerate() {
        for (p, xp) in positions.iter().enumerate() {
            u[(l, p)] = kernel.value(xl, xp);
            let g2 = kernel.grad2(xl, xp);
            let g1 = kernel.grad1(xl, xp);
            let mixed = kernel.d1d2(xl, xp);
            for j in 0..d {
                u[(l, s + p * d + j)] = d_norm[s + p * d + j] * g2[j];
                u[(s + l * d + j, p)] = d_norm[s + l * d + j] * g1[j];
            }
            for i in 0..d {
                for j in 0..d {
                    u[(s + l * d + i, s + p * d + j)] =
                        d_norm[s + l * d + i] * d_norm[s + p * d + j] * mixed[(i, j)];
                }
            }
        }
    }
    u
}

/// `(1/|indices|) sum_{k in indices} Re[gamma_k gamma_k^H]` over a subset
/// of a draw's features.
pub(crate) fn empirical_upsilon(
    draw: &FeatureDraw,
    indices: &[usize],
    positions: &[Vec<f64>],
    d_norm: &[f64],
) -> DMatrix<f64> {
    let (s, d) = (positions.len(), positions[0].len());
    let n = s * (d + 1);
    let map = draw.map();
    let mut u = DMatrix::zeros(n, n);
    let mut gamma = vec![Complex64::new(0.0, 0.0); n];
    for &k in indices {
        let omega = draw.omega(k);
        for (l, x) in positions.iter().enumerate() {
            gamma[l] = feature_value(map, omega, x).conj();
            for (i, g) in feature_grad(map, omega, x).iter().enumerate() {
                gamma[s + l * d + i] = d_norm[s + l * d + i] * g.conj();
            }
        }
        for i in 0..n {
            for j in 0..n {
                u[(i, j)] += (gamma[i] * gamma[j].conj()).re;
            }
        }
    }
    u / indices.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::SepNorm;
    use crate::features::{draw_features, FeatureFamily};
    use crate::kernels::KernelFamily;

    fn gaussian_kernel(d: usize) -> KernelModel {
        let dom = Domain::cube(d, 8.0, SepNorm::L2).unwrap();
        KernelModel::new(KernelFamily::Gaussian { sigma: 1.0 }, dom).unwrap()
    }

    #[test]
    fn limit_system_has_unit_diagonal_and_symmetry() {
        let kernel = gaussian_kernel(2);
        let positions = vec![vec![-4.0, -4.0], vec![0.0, 0.5], vec![4.0, 3.5]];
        let signs = vec![1.0, -1.0, 1.0];
        let sys = InterpolationSystem::limit(&kernel, &positions, &signs).unwrap();
        assert_eq!(sys.size(), 9);
        let u = sys.upsilon();
        for i in 0..9 {
            assert!((u[(i, i)] - 1.0).abs() < 1e-12, "diag[{i}] = {}", u[(i, i)]);
            for j in 0..9 {
                assert!((u[(i, j)] - u[(j, i)]).abs() < 1e-15);
            }
        }
        // Well-separated spikes leave the system close to the identity.
        assert!(sys.cond() < 1.5, "cond = {}", sys.cond());
    }

    #[test]
    fn solve_refines_to_machine_precision() {
        let kernel = gaussian_kernel(1);
        let positions = vec![vec![-2.0], vec![0.0], vec![2.5]];
        let signs = vec![1.0, 1.0, -1.0];
        let sys = InterpolationSystem::limit(&kernel, &positions, &signs).unwrap();
        let rhs = sys.sign_vector();
        let x = sys.solve(&rhs).unwrap();
        let residual = (&rhs - sys.upsilon() * &x).amax();
        assert!(residual < 1e-14, "residual = {residual}");
    }

    #[test]
    fn empirical_system_approaches_limit() {
        // Spectral deviation of the empirical moment matrix from the
        // analytic limit at m = 1e4 * s, pinned seed.
        let d = 2;
        let dom = Domain::cube(d, 8.0, SepNorm::L2).unwrap();
        let map =
            FeatureMap::new(FeatureFamily::WeightedGaussianFourier { sigma: 1.0 }, dom).unwrap();
        let positions = vec![vec![-4.0, -4.0], vec![0.0, 0.5], vec![4.0, 3.5]];
        let signs = vec![1.0, -1.0, 1.0];
        let draw = draw_features(&map, 30_000, 0x5E5).unwrap();
        let emp = InterpolationSystem::empirical(&draw, &positions, &signs).unwrap();
        let lim =
            InterpolationSystem::limit(&map.limit_kernel().unwrap(), &positions, &signs).unwrap();
        let diff = emp.upsilon() - lim.upsilon();
        let spectral =
            diff.symmetric_eigenvalues().iter().fold(0.0f64, |m, &l| m.max(l.abs()));
        assert!(spectral <= 0.1, "spectral deviation = {spectral}");
    }

    #[test]
    fn clustered_spikes_are_rejected_as_ill_conditioned() {
        let kernel = gaussian_kernel(1);
        let positions = vec![vec![0.0], vec![1e-8]];
        let signs = vec![1.0, 1.0];
        match InterpolationSystem::limit(&kernel, &positions, &signs) {
            Err(Error::IllConditioned { cond }) => assert!(cond >= 1e12),
            other => panic!("expected ill-conditioned error, got {other:?}"),
        }
    }

    #[test]
    fn spike_validation() {
        let kernel = gaussian_kernel(1);
        assert!(matches!(
            InterpolationSystem::limit(&kernel, &[], &[]),
            Err(Error::EmptyInput(_))
        ));
        assert!(matches!(
            InterpolationSystem::limit(&kernel, &[vec![0.0]], &[0.5]),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            InterpolationSystem::limit(&kernel, &[vec![0.0, 0.0]], &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            InterpolationSystem::limit(&kernel, &[vec![0.0], vec![1.0]], &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
