//! Gaussian-mixture compression: draw samples from an identity-covariance
//! mixture, fold them into a fixed-size Fourier sketch in one streaming
//! pass, and recover means and weights with the measure-space solver over
//! characteristic-function features.
//!
//! The sketch `y_k = (M_C/n) sum_j e^{i omega_k . t_j}` concentrates around
//! the mixture's characteristic function, which is exactly the forward
//! image of `sum_i a_i delta_{x_i}` under the `GmmCharacteristic` feature
//! family. Recovery is therefore a penalized solve against that family,
//! with sketch noise controlled by an explicit `O(1/sqrt(n))` bound.

use std::io::{BufRead, Write};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blasso::{solve, BlassoProblem, SolveResult, SolverConfig};
use crate::domain::{Domain, SepNorm};
use crate::features::{draw_features, FeatureDraw, FeatureFamily, FeatureMap, MeasurementSet};
use crate::{Error, Result};

/// Samples per accumulation block. Both sketching paths fold the stream in
/// blocks of this size with identical per-entry addition order, so the
/// streaming and in-memory results agree bit for bit.
const BLOCK: usize = 1024;

/// Padding added to the sample range on every coordinate when choosing the
/// recovery box; three unit standard deviations of the component law.
const RECOVERY_MARGIN: f64 = 3.0;

/// Slack allowed on the weight sum before a mixture is rejected.
const WEIGHT_SUM_TOL: f64 = 1e-9;

// ---------------------------------------------------------------------------
// Mixture model
// ---------------------------------------------------------------------------

/// A Gaussian mixture with identity component covariance: means `x_i` and
/// positive weights `a_i` summing to one. Unknown covariances are out of
/// scope by construction.
///
/// Models built by [`GmmModel::new`] are never empty; an estimate returned
/// by [`recover`] may be, when the penalty suppresses every component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub means: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl GmmModel {
    /// Validates and exactly renormalizes the weights (the input sum may be
    /// off by at most `1e-9`).
    pub fn new(means: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        let mut model = GmmModel { means, weights };
        model.validate()?;
        let total: f64 = model.weights.iter().sum();
        for w in &mut model.weights {
            *w /= total;
        }
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.means.is_empty() {
            return Err(Error::EmptyInput("a mixture needs at least one component"));
        }
        if self.weights.len() != self.means.len() {
            return Err(Error::DimensionMismatch {
                expected: self.means.len(),
                got: self.weights.len(),
            });
        }
        let d = self.means[0].len();
        if d == 0 {
            return Err(Error::InvalidParameter("mixture means must have dimension >= 1".into()));
        }
        for x in &self.means {
            if x.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: x.len() });
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter("mixture means must be finite".into()));
            }
        }
        for &w in &self.weights {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "mixture weights must be positive, got {w}"
                )));
            }
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidParameter(format!(
                "mixture weights must sum to 1, got {total}"
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    /// Ambient dimension; zero only for an empty estimate.
    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }
}

/// Draws `n` points from the mixture: a component per the weights, then the
/// mean plus a standard normal vector. One sample consumes one uniform and
/// `d` normals, in that order, so draws are reproducible across runs.
pub fn sample_gmm(model: &GmmModel, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    model.validate()?;
    if n == 0 {
        return Err(Error::InvalidParameter("sample count must be at least 1".into()));
    }
    let mut cum = Vec::with_capacity(model.weights.len());
    let mut acc = 0.0;
    for &w in &model.weights {
        acc += w;
        cum.push(acc);
    }
    let total = *cum.last().expect("validated mixture is nonempty");
    let d = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|_| {
            let u = rng.gen::<f64>() * total;
            // First index with cum >= u; u < total keeps it in range.
            let idx = cum.partition_point(|&c| c < u);
            let mean = &model.means[idx];
            (0..d).map(|j| mean[j] + rng.sample::<f64, _>(StandardNormal)).collect()
        })
        .collect();
    Ok(samples)
}

// ---------------------------------------------------------------------------
// Sketch configuration and container
// ---------------------------------------------------------------------------

/// Parameters of a sketching run. `m_c = (1 + 2 sigma_c^2)^{d/2}` is stored
/// for serialization but always recomputable; [`SketchConfig::validate`]
/// rejects a drifted value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SketchConfig {
    pub sigma_c: f64,
    pub d: usize,
    pub m: usize,
    pub seed: u64,
    pub m_c: f64,
}

impl SketchConfig {
    pub fn new(sigma_c: f64, d: usize, m: usize, seed: u64) -> Result<Self> {
        if !(sigma_c.is_finite() && sigma_c > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "frequency scale sigma_c must be positive, got {sigma_c}"
            )));
        }
        if d == 0 {
            return Err(Error::InvalidParameter("sketch dimension must be at least 1".into()));
        }
        if m == 0 {
            return Err(Error::InvalidParameter("sketch size m must be at least 1".into()));
        }
        let m_c = (1.0 + 2.0 * sigma_c * sigma_c).powf(d as f64 / 2.0);
        Ok(SketchConfig { sigma_c, d, m, seed, m_c })
    }

    /// The default frequency scale `sigma_c = 1/sqrt(d)`, the choice that
    /// keeps the sketch size polynomial in the dimension.
    pub fn with_default_sigma(d: usize, m: usize, seed: u64) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParameter("sketch dimension must be at least 1".into()));
        }
        Self::new(1.0 / (d as f64).sqrt(), d, m, seed)
    }

    pub fn validate(&self) -> Result<()> {
        let fresh = SketchConfig::new(self.sigma_c, self.d, self.m, self.seed)?;
        if (self.m_c - fresh.m_c).abs() > 1e-12 * fresh.m_c {
            return Err(Error::InvalidParameter(format!(
                "stored amplitude constant {} disagrees with recomputed {}",
                self.m_c, fresh.m_c
            )));
        }
        Ok(())
    }
}

/// The canonical frequency draw for a config: `m` iid `N(0, sigma_c^2 Id)`
/// rows, a function of `(sigma_c, d, m, seed)` only. Sketching and recovery
/// both call this, so the frequencies always match even though recovery
/// rebinds them to a data-driven box.
pub fn frequency_draw(config: &SketchConfig) -> Result<FeatureDraw> {
    // The unit box is a placeholder; frequency draws for this family do not
    // depend on the domain.
    let domain = Domain::cube(config.d, 1.0, SepNorm::L2)?;
    let map = FeatureMap::new(FeatureFamily::GmmCharacteristic { sigma_c: config.sigma_c }, domain)?;
    draw_features(&map, config.m, config.seed)
}

/// A compressed sample set: the scaled empirical characteristic function at
/// `m` random frequencies, plus the sample count and coordinate range needed
/// to recover from it.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "SketchRecord", into = "SketchRecord")]
pub struct Sketch {
    pub y: Vec<Complex64>,
    pub n: usize,
    pub config: SketchConfig,
    draw: FeatureDraw,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Sketch {
    /// Rebuilds a sketch from its serializable parts, re-drawing the
    /// frequencies from the config seed.
    pub fn from_parts(
        config: SketchConfig,
        y: Vec<Complex64>,
        n: usize,
        lo: Vec<f64>,
        hi: Vec<f64>,
    ) -> Result<Self> {
        config.validate()?;
        if y.len() != config.m {
            return Err(Error::DimensionMismatch { expected: config.m, got: y.len() });
        }
        if n == 0 {
            return Err(Error::EmptyInput("a sketch must cover at least one sample"));
        }
        if lo.len() != config.d || hi.len() != config.d {
            return Err(Error::DimensionMismatch { expected: config.d, got: lo.len().min(hi.len()) });
        }
        for (l, h) in lo.iter().zip(&hi) {
            if !(l.is_finite() && h.is_finite() && l <= h) {
                return Err(Error::InvalidParameter(format!(
                    "sample range [{l}, {h}] must be finite and ordered"
                )));
            }
        }
        let draw = frequency_draw(&config)?;
        Ok(Sketch { y, n, config, draw, lo, hi })
    }

    /// The frequencies behind `y`. The attached map is bound to a placeholder
    /// unit box; feature values do not depend on it, and [`recover`] rebinds
    /// the same frequencies to the data-driven box.
    pub fn draw(&self) -> &FeatureDraw {
        &self.draw
    }

    /// Per-coordinate sample minima.
    pub fn sample_lo(&self) -> &[f64] {
        &self.lo
    }

    /// Per-coordinate sample maxima.
    pub fn sample_hi(&self) -> &[f64] {
        &self.hi
    }
}

/// Serialized form of [`Sketch`]: everything but the frequencies, which the
/// config seed regenerates bit for bit.
#[derive(Clone, Serialize, Deserialize)]
struct SketchRecord {
    config: SketchConfig,
    n: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    y: Vec<Complex64>,
}

impl TryFrom<SketchRecord> for Sketch {
    type Error = Error;

    fn try_from(r: SketchRecord) -> Result<Self> {
        Sketch::from_parts(r.config, r.y, r.n, r.lo, r.hi)
    }
}

impl From<Sketch> for SketchRecord {
    fn from(s: Sketch) -> Self {
        SketchRecord { config: s.config, n: s.n, lo: s.lo, hi: s.hi, y: s.y }
    }
}

// ---------------------------------------------------------------------------
// Sketching
// ---------------------------------------------------------------------------

/// `sum_j e^{i omega_k . t_j}` over one block, one entry per frequency,
/// samples folded in row order. `flat` is `rows` points of dimension `d`.
/// Parallel over frequencies; the per-entry addition order is row order
/// regardless, which keeps every sketching path bit-identical.
fn block_partial_par(draw: &FeatureDraw, flat: &[f64], rows: usize, d: usize) -> Vec<Complex64> {
    (0..draw.m())
        .into_par_iter()
        .map(|k| {
            let omega = draw.omega(k);
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..rows {
                let t = &flat[j * d..(j + 1) * d];
                let phase: f64 = omega.iter().zip(t).map(|(w, v)| w * v).sum();
                acc += Complex64::new(phase.cos(), phase.sin());
            }
            acc
        })
        .collect()
}

/// Sequential twin of [`block_partial_par`]: same per-entry addition order,
/// used when parallelism is applied across blocks instead.
fn block_partial_seq(draw: &FeatureDraw, flat: &[f64], rows: usize, d: usize) -> Vec<Complex64> {
    let mut acc = vec![Complex64::new(0.0, 0.0); draw.m()];
    for j in 0..rows {
        let t = &flat[j * d..(j + 1) * d];
        for (k, slot) in acc.iter_mut().enumerate() {
            let phase: f64 = draw.omega(k).iter().zip(t).map(|(w, v)| w * v).sum();
            *slot += Complex64::new(phase.cos(), phase.sin());
        }
    }
    acc
}

struct SketchAccumulator {
    draw: FeatureDraw,
    total: Vec<Complex64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    n: usize,
}

impl SketchAccumulator {
    fn new(config: &SketchConfig) -> Result<Self> {
        let draw = frequency_draw(config)?;
        Ok(SketchAccumulator {
            draw,
            total: vec![Complex64::new(0.0, 0.0); config.m],
            lo: vec![f64::INFINITY; config.d],
            hi: vec![f64::NEG_INFINITY; config.d],
            n: 0,
        })
    }

    /// Folds one block's partial sums into the running totals. Blocks must
    /// arrive in stream order.
    fn merge_block(&mut self, partial: &[Complex64], rows: usize) {
        for (slot, p) in self.total.iter_mut().zip(partial) {
            *slot += p;
        }
        self.n += rows;
    }

    fn observe_range(&mut self, t: &[f64]) {
        for ((l, h), &v) in self.lo.iter_mut().zip(&mut self.hi).zip(t) {
            *l = l.min(v);
            *h = h.max(v);
        }
    }

    fn finish(self, config: &SketchConfig) -> Result<Sketch> {
        if self.n == 0 {
            return Err(Error::EmptyInput("cannot sketch zero samples"));
        }
        let scale = config.m_c / self.n as f64;
        let y = self.total.into_iter().map(|v| v * scale).collect();
        Ok(Sketch { y, n: self.n, config: config.clone(), draw: self.draw, lo: self.lo, hi: self.hi })
    }
}

fn check_sample(t: &[f64], d: usize) -> Result<()> {
    if t.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: t.len() });
    }
    if t.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("sample coordinates must be finite".into()));
    }
    Ok(())
}

/// Sketches a sample stream in a single pass with memory bounded by one
/// block (`1024` points), independent of the stream length. Within a block
/// the frequencies are accumulated in parallel.
pub fn sketch_stream<I>(samples: I, config: &SketchConfig) -> Result<Sketch>
where
    I: IntoIterator,
    I::Item: AsRef<[f64]>,
{
    config.validate()?;
    let d = config.d;
    let mut acc = SketchAccumulator::new(config)?;
    let mut flat = Vec::with_capacity(BLOCK * d);
    let mut rows = 0usize;
    for item in samples {
        let t = item.as_ref();
        check_sample(t, d)?;
        acc.observe_range(t);
        flat.extend_from_slice(t);
        rows += 1;
        if rows == BLOCK {
            let partial = block_partial_par(&acc.draw, &flat, rows, d);
            acc.merge_block(&partial, rows);
            flat.clear();
            rows = 0;
        }
    }
    if rows > 0 {
        let partial = block_partial_par(&acc.draw, &flat, rows, d);
        acc.merge_block(&partial, rows);
    }
    acc.finish(config)
}

/// Sketches an in-memory sample set, parallel across blocks. Bit-identical
/// to [`sketch_stream`] on the same samples: both fold row-ordered block
/// partials in block order.
pub fn sketch_samples(samples: &[Vec<f64>], config: &SketchConfig) -> Result<Sketch> {
    config.validate()?;
    let d = config.d;
    for t in samples {
        check_sample(t, d)?;
    }
    let mut acc = SketchAccumulator::new(config)?;
    for t in samples {
        acc.observe_range(t);
    }
    let partials: Vec<(Vec<Complex64>, usize)> = samples
        .par_chunks(BLOCK)
        .map(|chunk| {
            let mut flat = Vec::with_capacity(chunk.len() * d);
            for t in chunk {
                flat.extend_from_slice(t);
            }
            (block_partial_seq(&acc.draw, &flat, chunk.len(), d), chunk.len())
        })
        .collect();
    for (partial, rows) in &partials {
        acc.merge_block(partial, *rows);
    }
    acc.finish(config)
}

/// Combines sketches of disjoint sample sets into the sketch of their
/// union: the count-weighted average of the `y` vectors. Configs must be
/// identical, frequencies included.
pub fn merge_sketches(a: &Sketch, b: &Sketch) -> Result<Sketch> {
    if a.config != b.config {
        return Err(Error::InvalidParameter(
            "cannot merge sketches with different configurations".into(),
        ));
    }
    let (na, nb) = (a.n as f64, b.n as f64);
    let n = a.n + b.n;
    let y = a
        .y
        .iter()
        .zip(&b.y)
        .map(|(ya, yb)| (ya * na + yb * nb) / (na + nb))
        .collect();
    let lo = a.lo.iter().zip(&b.lo).map(|(x, y)| x.min(*y)).collect();
    let hi = a.hi.iter().zip(&b.hi).map(|(x, y)| x.max(*y)).collect();
    Ok(Sketch { y, n, config: a.config.clone(), draw: a.draw.clone(), lo, hi })
}

/// High-probability bound on the sketch noise `||y - Phi mu_0||` in the
/// measurement norm: `(m_c/sqrt(n)) (1 + sqrt(2 log(2/rho)))`, valid with
/// probability at least `1 - rho` over the samples.
pub fn noise_bound(n: usize, rho: f64, m_c: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidParameter("sample count must be at least 1".into()));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "failure probability must lie in (0, 1), got {rho}"
        )));
    }
    if !(m_c.is_finite() && m_c > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "amplitude constant must be positive, got {m_c}"
        )));
    }
    Ok(m_c / (n as f64).sqrt() * (1.0 + (2.0 * (2.0 / rho).ln()).sqrt()))
}

// ---------------------------------------------------------------------------
// Recovery
// ---------------------------------------------------------------------------

/// Output of [`recover`]: the cleaned-up mixture estimate plus the raw
/// solver result (in box-centered coordinates) and the frame that maps
/// between them.
#[derive(Clone, Debug, Serialize)]
pub struct GmmRecovery {
    /// Means in data coordinates, weights clipped at zero and renormalized
    /// to sum one. Empty when the penalty suppresses every component.
    pub model: GmmModel,
    /// Raw solver output; positions are relative to `center`, amplitudes
    /// are unnormalized.
    pub solve: SolveResult,
    /// The recovery box (centered); data coordinates are `x + center`.
    pub domain: Domain,
    pub center: Vec<f64>,
    /// Total negative amplitude zeroed during cleanup.
    pub clipped_mass: f64,
    /// Human-readable notes on every non-silent adjustment.
    pub warnings: Vec<String>,
}

/// Recovers a mixture from a sketch by solving the penalized problem over
/// characteristic-function features on a box inferred from the sample
/// range (three standard deviations of padding per side).
///
/// The box is centered by demodulating the sketch: translating positions by
/// `c` multiplies each feature by the known phase `e^{i omega . c}`, so the
/// solve runs on `y_k e^{-i omega_k . c}` and the recovered means are
/// shifted back. Negative recovered weights are zeroed and reported, never
/// kept silently.
pub fn recover(sketch: &Sketch, lambda: f64, solver: &SolverConfig) -> Result<GmmRecovery> {
    sketch.config.validate()?;
    let d = sketch.config.d;
    let center: Vec<f64> = sketch.lo.iter().zip(&sketch.hi).map(|(l, h)| 0.5 * (l + h)).collect();
    let half_width = sketch
        .lo
        .iter()
        .zip(&sketch.hi)
        .map(|(l, h)| 0.5 * (h - l) + RECOVERY_MARGIN)
        .fold(f64::NEG_INFINITY, f64::max);
    let domain = Domain::cube(d, half_width, SepNorm::L2)?;
    let map =
        FeatureMap::new(FeatureFamily::GmmCharacteristic { sigma_c: sketch.config.sigma_c }, domain.clone())?;
    let draw = draw_features(&map, sketch.config.m, sketch.config.seed)?;
    debug_assert_eq!(draw.omega(0), sketch.draw.omega(0), "frequency draw must be reproducible");

    let y: Vec<Complex64> = sketch
        .y
        .iter()
        .enumerate()
        .map(|(k, yk)| {
            let phase: f64 = draw.omega(k).iter().zip(&center).map(|(w, c)| w * c).sum();
            yk * Complex64::new(phase.cos(), -phase.sin())
        })
        .collect();
    let problem = BlassoProblem::new(MeasurementSet::noiseless(y), draw, lambda)?;
    let out = solve(&problem, solver, sketch.config.seed)?;

    let mut warnings = Vec::new();
    let mut clipped_mass = 0.0;
    let mut means = Vec::new();
    let mut weights = Vec::new();
    let mut negatives = 0usize;
    for atom in &out.measure.atoms {
        if atom.a <= 0.0 {
            negatives += 1;
            clipped_mass += -atom.a;
            continue;
        }
        means.push(atom.x.iter().zip(&center).map(|(x, c)| x + c).collect());
        weights.push(atom.a);
    }
    if negatives > 0 {
        warnings.push(format!(
            "zeroed {negatives} component(s) with negative weight totaling {clipped_mass:.6e}"
        ));
    }
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        for w in &mut weights {
            *w /= total;
        }
    } else if out.measure.atoms.is_empty() {
        warnings.push("penalty suppressed every component; the estimate is empty".into());
    } else {
        means.clear();
        weights.clear();
        warnings.push("no component kept a positive weight; the estimate is empty".into());
    }
    let model = GmmModel { means, weights };
    Ok(GmmRecovery { model, solve: out, domain, center, clipped_mass, warnings })
}

// ---------------------------------------------------------------------------
// Sample-set CSV
// ---------------------------------------------------------------------------

/// Writes samples as CSV, one row per point, header `t0,t1,...`.
pub fn write_samples_csv<W: Write>(mut out: W, samples: &[Vec<f64>]) -> Result<()> {
    let io_err = |e: std::io::Error| Error::Serialization(format!("csv write: {e}"));
    let d = match samples.first() {
        Some(t) => t.len(),
        None => return Err(Error::EmptyInput("cannot write an empty sample set")),
    };
    let header: Vec<String> = (0..d).map(|j| format!("t{j}")).collect();
    writeln!(out, "{}", header.join(",")).map_err(io_err)?;
    for t in samples {
        if t.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: t.len() });
        }
        let row: Vec<String> = t.iter().map(f64::to_string).collect();
        writeln!(out, "{}", row.join(",")).map_err(io_err)?;
    }
    Ok(())
}

/// Reads a sample set written by [`write_samples_csv`]; the header row
/// fixes the dimension.
pub fn read_samples_csv<R: BufRead>(reader: R) -> Result<Vec<Vec<f64>>> {
    let mut samples = Vec::new();
    let mut d = 0usize;
    for (idx, line) in reader.lines().enumerate() {
        let n = idx + 1;
        let line = line.map_err(|e| Error::Serialization(format!("csv line {n}: {e}")))?;
        if idx == 0 {
            let fields: Vec<&str> = line.trim().split(',').collect();
            d = fields.len();
            for (j, f) in fields.iter().enumerate() {
                if *f != format!("t{j}") {
                    return Err(Error::Serialization(format!(
                        "csv line {n}: expected header column 't{j}', got '{f}'"
                    )));
                }
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let row: Result<Vec<f64>> = line
            .split(',')
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Serialization(format!("csv line {n}: {e}")))
            })
            .collect();
        let row = row?;
        if row.len() != d {
            return Err(Error::Serialization(format!(
                "csv line {n}: expected {d} coordinates, got {}",
                row.len()
            )));
        }
        samples.push(row);
    }
    if samples.is_empty() {
        return Err(Error::EmptyInput("sample csv holds no rows"));
    }
    Ok(samples)
}
