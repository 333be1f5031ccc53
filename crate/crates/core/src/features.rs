//! Random-feature families: frequency laws and sampling, the measurement
//! operator and its adjoint, empirical kernels, and Lipschitz bundles.
//!
//! Every family has the form `phi_omega(x) = w(omega) e^{i k(omega)^T x}`
//! with a real amplitude `w >= 0` and a real wave vector `k`, so an `x`
//! derivative multiplies by `(i k)` per order and the modulus of any
//! derivative is independent of `x`. Averaging `Re[conj(phi(x)) phi(x')]`
//! over the frequency law recovers the family's limit kernel.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{DiscreteMeasure, Domain, DomainKind, SepNorm};
use crate::kernels::{Fejer1d, KernelFamily, KernelModel};
use crate::{Error, Result};

/// Feature family `phi_omega(x) = w(omega) e^{i k(omega)^T x}` and the
/// frequency law its draws follow.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FeatureFamily {
    /// Unimodular Fourier features `e^{i 2 pi omega^T x}` on integer
    /// frequencies, each coordinate drawn on `[-f_c, f_c]` from the mass
    /// function of the squared Fejér kernel. Torus domain.
    FejerFourier { f_c: u32 },
    /// `e^{i omega^T x} / f(omega)` with the polynomial reweighting `f`
    /// that makes `f(omega)^2 N(0, sigma^{-2} Id)` a probability law; the
    /// limit kernel is the Gaussian of width `sigma`. Box domain.
    WeightedGaussianFourier { sigma: f64 },
    /// Characteristic-function features `M_C e^{i omega^T x - |omega|^2/2}`
    /// with `omega ~ N(0, sigma_c^2 Id)` and `M_C = (1+2 sigma_c^2)^{d/2}`.
    /// Box domain.
    GmmCharacteristic { sigma_c: f64 },
}

/// Certified feature-derivative bounds `sup_omega sup_x |grad^r phi| <= lr`
/// for `r = 0..3`, plus the mixed constant `l01 = sqrt(l0^2 + l1^2 / v)`
/// (`v` the limit kernel's diagonal curvature) used by certification grids.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzBundle {
    pub l0: f64,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l01: f64,
}

/// A feature family bound to its domain, with certified derivative bounds.
#[derive(Clone, Debug, Serialize)]
pub struct FeatureMap {
    family: FeatureFamily,
    domain: Domain,
    lipschitz: LipschitzBundle,
}

impl FeatureMap {
    pub fn new(family: FeatureFamily, domain: Domain) -> Result<Self> {
        let d = domain.dim() as f64;
        let lipschitz = match family {
            FeatureFamily::FejerFourier { f_c } => {
                if domain.kind() != DomainKind::Torus || domain.sep_norm() != SepNorm::Inf {
                    return Err(Error::FamilyDomainMismatch(
                        "Fejér Fourier features require a torus domain with sup-norm separation"
                            .into(),
                    ));
                }
                let f1d = Fejer1d::new(f_c)?;
                let l1 = 2.0 * std::f64::consts::PI * f_c as f64 * d.sqrt();
                bundle(1.0, l1, l1 * l1, l1 * l1 * l1, f1d.neg_curvature_at_zero())
            }
            FeatureFamily::WeightedGaussianFourier { sigma } => {
                check_box_family(&domain, sigma, "weighted Gaussian Fourier")?;
                let lr = |r: u32| 2.0 * chi_even_moment(domain.dim(), sigma, r).sqrt();
                bundle(2.0, lr(1), lr(2), lr(3), 1.0 / (sigma * sigma))
            }
            FeatureFamily::GmmCharacteristic { sigma_c } => {
                check_box_family(&domain, sigma_c, "GMM characteristic")?;
                let m_c = (1.0 + 2.0 * sigma_c * sigma_c).powf(d / 2.0);
                // sup_t t^r e^{-t^2/2} = r^{r/2} e^{-r/2}, attained at sqrt(r).
                let lr = |r: i32| m_c * (r as f64).powi(r).sqrt() * (-0.5 * r as f64).exp();
                bundle(m_c, lr(1), lr(2), lr(3), m_c / (2.0 + 1.0 / (sigma_c * sigma_c)))
            }
        };
        Ok(FeatureMap { family, domain, lipschitz })
    }

    pub fn family(&self) -> FeatureFamily {
        self.family
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn lipschitz(&self) -> LipschitzBundle {
        self.lipschitz
    }

    /// The kernel the empirical covariance converges to, up to the constant
    /// [`FeatureMap::limit_scale`] (the model itself is unit at zero).
    pub fn limit_kernel(&self) -> Result<KernelModel> {
        let family = match self.family {
            FeatureFamily::FejerFourier { f_c } => KernelFamily::SquaredFejer { f_c },
            FeatureFamily::WeightedGaussianFourier { sigma } => KernelFamily::Gaussian { sigma },
            FeatureFamily::GmmCharacteristic { sigma_c } => KernelFamily::Gaussian {
                sigma: (2.0 + 1.0 / (sigma_c * sigma_c)).sqrt(),
            },
        };
        KernelModel::new(family, self.domain.clone())
    }

    /// `E |phi_omega(x)|^2`: 1 for the normalized families, `M_C` for the
    /// GMM family.
    pub fn limit_scale(&self) -> f64 {
        match self.family {
            FeatureFamily::GmmCharacteristic { sigma_c } => {
                (1.0 + 2.0 * sigma_c * sigma_c).powf(self.domain.dim() as f64 / 2.0)
            }
            _ => 1.0,
        }
    }

    /// The modulus `w(omega) = |phi_omega(x)|`, independent of `x`.
    pub fn amplitude(&self, omega: &[f64]) -> f64 {
        match self.family {
            FeatureFamily::FejerFourier { .. } => 1.0,
            FeatureFamily::WeightedGaussianFourier { sigma } => {
                let n2 = omega.iter().map(|w| w * w).sum::<f64>();
                let mut sum = 0.0;
                let mut pow = 1.0;
                for l in 0..4u32 {
                    sum += pow / chi_even_moment(self.domain.dim(), sigma, l);
                    pow *= n2;
                }
                2.0 / sum.sqrt()
            }
            FeatureFamily::GmmCharacteristic { .. } => {
                let n2 = omega.iter().map(|w| w * w).sum::<f64>();
                self.limit_scale() * (-0.5 * n2).exp()
            }
        }
    }

    /// Scale turning a frequency into the wave vector `k(omega)`.
    pub(crate) fn wave_scale(&self) -> f64 {
        match self.family {
            FeatureFamily::FejerFourier { .. } => 2.0 * std::f64::consts::PI,
            _ => 1.0,
        }
    }
}

fn bundle(l0: f64, l1: f64, l2: f64, l3: f64, v: f64) -> LipschitzBundle {
    LipschitzBundle { l0, l1, l2, l3, l01: (l0 * l0 + l1 * l1 / v).sqrt() }
}

fn check_box_family(domain: &Domain, width: f64, name: &str) -> Result<()> {
    if !(width.is_finite() && width > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "{name} width must be positive, got {width}"
        )));
    }
    if domain.kind() != DomainKind::Box || domain.sep_norm() != SepNorm::L2 {
        return Err(Error::FamilyDomainMismatch(format!(
            "{name} features require a box domain with Euclidean separation"
        )));
    }
    Ok(())
}

/// `E |omega|^{2l}` for `omega ~ N(0, sigma^{-2} Id)` in dimension `d`:
/// the even moments of a scaled chi variable,
/// `(2/sigma^2)^l prod_{j<l} (d/2 + j)`.
fn chi_even_moment(d: usize, sigma: f64, l: u32) -> f64 {
    let mut acc = 1.0;
    for j in 0..l {
        acc *= 2.0 / (sigma * sigma) * (d as f64 / 2.0 + j as f64);
    }
    acc
}

// ---------------------------------------------------------------------------
// Frequency draws
// ---------------------------------------------------------------------------

/// A realized draw of `m` iid frequencies, with the map that drew them.
#[derive(Clone, Debug)]
pub struct FeatureDraw {
    map: FeatureMap,
    /// Row-major `m x d` frequency block.
    omegas: Vec<f64>,
    m: usize,
    seed: u64,
}

impl FeatureDraw {
    pub fn map(&self) -> &FeatureMap {
        &self.map
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn omega(&self, k: usize) -> &[f64] {
        let d = self.map.domain.dim();
        &self.omegas[k * d..(k + 1) * d]
    }

    /// The serializable identity of this draw.
    pub fn spec(&self) -> DrawSpec {
        DrawSpec {
            family: self.map.family,
            domain: self.map.domain.clone(),
            seed: self.seed,
            m: self.m,
        }
    }
}

/// Serializable identity of a draw: family parameters, domain, seed, count.
/// Frequencies are not stored; [`DrawSpec::realize`] regenerates them
/// bit-for-bit from the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrawSpec {
    #[serde(flatten)]
    pub family: FeatureFamily,
    pub domain: Domain,
    pub seed: u64,
    pub m: usize,
}

impl DrawSpec {
    pub fn realize(&self) -> Result<FeatureDraw> {
        let map = FeatureMap::new(self.family, self.domain.clone())?;
        draw_features(&map, self.m, self.seed)
    }
}

/// Draws `m` iid frequencies from the map's law. Same `(map, m, seed)`
/// always produces the identical draw.
pub fn draw_features(map: &FeatureMap, m: usize, seed: u64) -> Result<FeatureDraw> {
    if m == 0 {
        return Err(Error::InvalidParameter("feature count m must be at least 1".into()));
    }
    let d = map.domain.dim();
    let omegas = match map.family {
        FeatureFamily::FejerFourier { f_c } => draw_fejer(f_c, d, m, seed)?,
        FeatureFamily::WeightedGaussianFourier { sigma } => {
            draw_weighted_gaussian(map, sigma, d, m, seed)
        }
        FeatureFamily::GmmCharacteristic { sigma_c } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..m * d).map(|_| sigma_c * rng.sample::<f64, _>(StandardNormal)).collect()
        }
    };
    Ok(FeatureDraw { map: map.clone(), omegas, m, seed })
}

fn draw_fejer(f_c: u32, d: usize, m: usize, seed: u64) -> Result<Vec<f64>> {
    let kernel = Fejer1d::new(f_c)?;
    // Inverse-CDF table over j = -f_c..=f_c. The mass sums to 1 up to
    // roundoff; sampling against the final cumulative value absorbs it.
    let mut cum = Vec::with_capacity(2 * f_c as usize + 1);
    let mut acc = 0.0;
    for j in -(f_c as i64)..=f_c as i64 {
        acc += kernel.coeff(j);
        cum.push(acc);
    }
    let total = *cum.last().expect("nonempty cumulative table");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = (0..m * d)
        .map(|_| {
            let u = rng.gen::<f64>() * total;
            // First index with cum >= u; u < total keeps it in range.
            let idx = cum.partition_point(|&c| c < u);
            idx as f64 - f_c as f64
        })
        .collect();
    Ok(out)
}

// Distinct substreams for the proposal pool and the resampling thresholds.
const POOL_STREAM: u64 = 0x706f_6f6c;
const PICK_STREAM: u64 = 0x7069_636b;
const POOL_FACTOR: usize = 50;

/// Self-normalized importance resampling targeting `f(omega)^2 N(0,
/// sigma^{-2} Id)`: a pool of `50 m` proposals from the base Gaussian is
/// weighted by `f^2` and resampled down to `m`. Two passes over the replayed
/// proposal stream keep memory at `O(m)` instead of the pool size.
fn draw_weighted_gaussian(map: &FeatureMap, sigma: f64, d: usize, m: usize, seed: u64) -> Vec<f64> {
    let pool = POOL_FACTOR * m;
    let f2 = |omega: &[f64]| {
        let a = map.amplitude(omega);
        1.0 / (a * a)
    };
    let fill = |rng: &mut ChaCha8Rng, buf: &mut [f64]| {
        for z in buf.iter_mut() {
            *z = rng.sample::<f64, _>(StandardNormal) / sigma;
        }
    };

    let mut omega = vec![0.0; d];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ POOL_STREAM);
    let mut total = 0.0;
    for _ in 0..pool {
        fill(&mut rng, &mut omega);
        total += f2(&omega);
    }

    // Sorted thresholds turn the resampling into one merge pass. Uniforms
    // are strictly below 1, so every threshold is crossed by the replayed
    // cumulative sum (which reproduces `total` bit-for-bit).
    let mut trng = ChaCha8Rng::seed_from_u64(seed ^ PICK_STREAM);
    let mut thresholds: Vec<f64> = (0..m).map(|_| trng.gen::<f64>() * total).collect();
    thresholds.sort_by(f64::total_cmp);

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ POOL_STREAM);
    let mut out = Vec::with_capacity(m * d);
    let mut cum = 0.0;
    let mut next = 0;
    for _ in 0..pool {
        fill(&mut rng, &mut omega);
        cum += f2(&omega);
        while next < m && thresholds[next] <= cum {
            out.extend_from_slice(&omega);
            next += 1;
        }
    }
    debug_assert_eq!(next, m);
    out
}

// ---------------------------------------------------------------------------
// Feature evaluation
// ---------------------------------------------------------------------------

/// `phi_omega(x)`.
pub fn feature_value(map: &FeatureMap, omega: &[f64], x: &[f64]) -> Complex64 {
    debug_assert_eq!(omega.len(), x.len());
    let theta = map.wave_scale() * dot(omega, x);
    Complex64::from_polar(map.amplitude(omega), theta)
}

/// `grad_x phi_omega(x) = i k(omega) phi_omega(x)`.
pub fn feature_grad(map: &FeatureMap, omega: &[f64], x: &[f64]) -> Vec<Complex64> {
    let (value, scale) = (feature_value(map, omega, x), map.wave_scale());
    omega.iter().map(|&w| Complex64::new(0.0, scale * w) * value).collect()
}

/// `hess_x phi_omega(x) = -(k k^T) phi_omega(x)`.
pub fn feature_hess(map: &FeatureMap, omega: &[f64], x: &[f64]) -> DMatrix<Complex64> {
    let (value, scale) = (feature_value(map, omega, x), map.wave_scale());
    let d = omega.len();
    DMatrix::from_fn(d, d, |i, j| -(scale * omega[i]) * (scale * omega[j]) * value)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------------------
// Measurement operator and adjoint
// ---------------------------------------------------------------------------

/// `y_k = sum_i a_i phi_{omega_k}(x_i)`.
pub fn forward(draw: &FeatureDraw, mu: &DiscreteMeasure) -> Result<Vec<Complex64>> {
    mu.check_dim(draw.map.domain.dim())?;
    Ok((0..draw.m)
        .into_par_iter()
        .map(|k| {
            let omega = draw.omega(k);
            mu.atoms.iter().map(|at| at.a * feature_value(&draw.map, omega, &at.x)).sum()
        })
        .collect())
}

fn check_adjoint_args(draw: &FeatureDraw, p: &[Complex64], x: &[f64]) -> Result<()> {
    if p.len() != draw.m {
        return Err(Error::DimensionMismatch { expected: draw.m, got: p.len() });
    }
    draw.map.domain.check_dim(x)
}

/// `(Phi* p)(x) = (1/m) sum_k Re(conj(p_k) phi_{omega_k}(x))`.
pub fn adjoint_value(draw: &FeatureDraw, p: &[Complex64], x: &[f64]) -> Result<f64> {
    check_adjoint_args(draw, p, x)?;
    let mut acc = 0.0;
    for (k, pk) in p.iter().enumerate() {
        acc += (pk.conj() * feature_value(&draw.map, draw.omega(k), x)).re;
    }
    Ok(acc / draw.m as f64)
}

/// Gradient of [`adjoint_value`] in `x`.
pub fn adjoint_grad(draw: &FeatureDraw, p: &[Complex64], x: &[f64]) -> Result<Vec<f64>> {
    check_adjoint_args(draw, p, x)?;
    let d = x.len();
    let scale = draw.map.wave_scale();
    let mut acc = vec![0.0; d];
    for (k, pk) in p.iter().enumerate() {
        let omega = draw.omega(k);
        let z = pk.conj() * feature_value(&draw.map, omega, x);
        for (acc_i, &w) in acc.iter_mut().zip(omega) {
            // Re(i k_i z) = -k_i Im(z).
            *acc_i -= scale * w * z.im;
        }
    }
    for a in &mut acc {
        *a /= draw.m as f64;
    }
    Ok(acc)
}

/// Hessian of [`adjoint_value`] in `x`.
pub fn adjoint_hess(draw: &FeatureDraw, p: &[Complex64], x: &[f64]) -> Result<DMatrix<f64>> {
    check_adjoint_args(draw, p, x)?;
    let d = x.len();
    let scale = draw.map.wave_scale();
    let mut acc = DMatrix::zeros(d, d);
    for (k, pk) in p.iter().enumerate() {
        let omega = draw.omega(k);
        let re = (pk.conj() * feature_value(&draw.map, omega, x)).re;
        for i in 0..d {
            for j in 0..d {
                acc[(i, j)] -= scale * omega[i] * scale * omega[j] * re;
            }
        }
    }
    Ok(acc / draw.m as f64)
}

// ---------------------------------------------------------------------------
// Empirical kernel
// ---------------------------------------------------------------------------

// conj(phi(x)) phi(x') = w^2 e^{i k^T (x' - x)}: every block below is a
// trigonometric average in theta = k^T (x' - x).

/// `C_hat(x, x') = (1/m) sum_k Re[conj(phi_k(x)) phi_k(x')]`.
pub fn empirical_kernel_value(draw: &FeatureDraw, x: &[f64], xp: &[f64]) -> Result<f64> {
    let mut acc = 0.0;
    empirical_sum(draw, x, xp, |w2, _, theta| acc += w2 * theta.cos())?;
    Ok(acc / draw.m as f64)
}

/// Gradient of the empirical kernel in its first argument.
pub fn empirical_kernel_grad1(draw: &FeatureDraw, x: &[f64], xp: &[f64]) -> Result<Vec<f64>> {
    let scale = draw.map.wave_scale();
    let mut acc = vec![0.0; x.len()];
    empirical_sum(draw, x, xp, |w2, omega, theta| {
        let s = w2 * theta.sin();
        for (a, &w) in acc.iter_mut().zip(omega) {
            *a += scale * w * s;
        }
    })?;
    for a in &mut acc {
        *a /= draw.m as f64;
    }
    Ok(acc)
}

/// Gradient of the empirical kernel in its second argument.
pub fn empirical_kernel_grad2(draw: &FeatureDraw, x: &[f64], xp: &[f64]) -> Result<Vec<f64>> {
    let mut g = empirical_kernel_grad1(draw, x, xp)?;
    for v in &mut g {
        *v = -*v;
    }
    Ok(g)
}

/// Mixed block `d/dx_i d/dx'_j` of the empirical kernel.
pub fn empirical_kernel_d1d2(draw: &FeatureDraw, x: &[f64], xp: &[f64]) -> Result<DMatrix<f64>> {
    let scale = draw.map.wave_scale();
    let d = x.len();
    let mut acc = DMatrix::zeros(d, d);
    empirical_sum(draw, x, xp, |w2, omega, theta| {
        let c = w2 * theta.cos();
        for i in 0..d {
            for j in 0..d {
                acc[(i, j)] += scale * omega[i] * scale * omega[j] * c;
            }
        }
    })?;
    Ok(acc / draw.m as f64)
}

/// Second derivative of the empirical kernel in its second argument.
pub fn empirical_kernel_hess2(draw: &FeatureDraw, x: &[f64], xp: &[f64]) -> Result<DMatrix<f64>> {
    let mut h = empirical_kernel_d1d2(draw, x, xp)?;
    h.neg_mut();
    Ok(h)
}

fn empirical_sum(
    draw: &FeatureDraw,
    x: &[f64],
    xp: &[f64],
    mut add: impl FnMut(f64, &[f64], f64),
) -> Result<()> {
    draw.map.domain.check_dim(x)?;
    draw.map.domain.check_dim(xp)?;
    let scale = draw.map.wave_scale();
    for k in 0..draw.m {
        let omega = draw.omega(k);
        let w = draw.map.amplitude(omega);
        let theta: f64 =
            scale * omega.iter().zip(x.iter().zip(xp)).map(|(o, (a, b))| o * (b - a)).sum::<f64>();
        add(w * w, omega, theta);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Measurements
// ---------------------------------------------------------------------------

/// A measurement vector with a known noise bound (`0` when noiseless).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    pub y: Vec<Complex64>,
    pub noise_level: f64,
}

impl MeasurementSet {
    pub fn noiseless(y: Vec<Complex64>) -> Self {
        MeasurementSet { y, noise_level: 0.0 }
    }

    /// Noiseless measurements of a discrete measure.
    pub fn from_measure(draw: &FeatureDraw, mu: &DiscreteMeasure) -> Result<Self> {
        Ok(Self::noiseless(forward(draw, mu)?))
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Writes the vector as CSV with columns `k,re,im`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let io_err = |e: std::io::Error| Error::Serialization(format!("csv write: {e}"));
        writeln!(out, "k,re,im").map_err(io_err)?;
        for (k, v) in self.y.iter().enumerate() {
            writeln!(out, "{k},{},{}", v.re, v.im).map_err(io_err)?;
        }
        Ok(())
    }

    /// Reads a `k,re,im` CSV produced by [`MeasurementSet::write_csv`].
    /// The CSV carries only the vector; the noise level is reset to zero.
    pub fn read_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut y = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let n = idx + 1;
            let line =
                line.map_err(|e| Error::Serialization(format!("csv line {n}: {e}")))?;
            if idx == 0 {
                if line.trim() != "k,re,im" {
                    return Err(Error::Serialization(format!(
                        "csv line {n}: expected header 'k,re,im', got '{line}'"
                    )));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let parse = |field: Option<&str>, what: &str| -> Result<f64> {
                field
                    .ok_or_else(|| {
                        Error::Serialization(format!("csv line {n}: missing {what}"))
                    })?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Serialization(format!("csv line {n}: {what}: {e}")))
            };
            let k = parse(parts.next(), "index")?;
            if k as usize != y.len() {
                return Err(Error::Serialization(format!(
                    "csv line {n}: index {k} out of order (expected {})",
                    y.len()
                )));
            }
            let re = parse(parts.next(), "re")?;
            let im = parse(parts.next(), "im")?;
            y.push(Complex64::new(re, im));
        }
        Ok(Self::noiseless(y))
    }
}
