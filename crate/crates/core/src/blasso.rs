//! Measure-space Lasso: a sliding Frank-Wolfe solver, the residual
//! certificate it steers by, and stability diagnostics for the recovered
//! measure.
//!
//! The objective is `(1/2m) sum_k |<phi_k, mu> - y_k|^2 + lambda |mu|(X)`,
//! equivalently `1/2 ||Phi mu - y||_H^2 + lambda |mu|(X)` in the scaled
//! inner product `<u, v>_H = (1/m) Re sum conj(u_k) v_k`. All norms on
//! measurement vectors below are this H norm.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{DiscreteMeasure, Domain, DomainKind, GridRegion, Region, RegionPartition};
use crate::features::{
    adjoint_grad, adjoint_value, feature_value, forward, FeatureDraw, MeasurementSet,
};
use crate::certificates::CertificateFunction;
use crate::{Error, Result};

/// Norm of a measurement-space vector: `sqrt((1/m) sum |v_k|^2)`.
pub fn h_norm(v: &[Complex64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    (v.iter().map(|z| z.norm_sqr()).sum::<f64>() / v.len() as f64).sqrt()
}

/// One regularized inverse problem: data, the feature draw that produced
/// it, and the regularization weight.
#[derive(Clone, Debug)]
pub struct BlassoProblem {
    pub measurements: MeasurementSet,
    pub draw: FeatureDraw,
    pub lambda: f64,
}

impl BlassoProblem {
    pub fn new(measurements: MeasurementSet, draw: FeatureDraw, lambda: f64) -> Result<Self> {
        if draw.m() == 0 {
            return Err(Error::EmptyInput("a problem needs at least one measurement"));
        }
        if measurements.len() != draw.m() {
            return Err(Error::DimensionMismatch { expected: draw.m(), got: measurements.len() });
        }
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "regularization weight must be positive, got {lambda}"
            )));
        }
        Ok(BlassoProblem { measurements, draw, lambda })
    }

    /// The objective value at `mu`.
    pub fn objective(&self, mu: &DiscreteMeasure) -> Result<f64> {
        let fw = forward(&self.draw, mu)?;
        let r: Vec<Complex64> =
            fw.iter().zip(&self.measurements.y).map(|(f, y)| f - y).collect();
        let fit = h_norm(&r);
        Ok(0.5 * fit * fit + self.lambda * mu.tv_norm())
    }
}

/// Solver knobs. Defaults suit well-conditioned problems in dimension 1-3;
/// `merge_radius` should be set to a small fraction of the spike
/// separation when the scale is known.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Stop adding spikes past this count.
    pub max_spikes: usize,
    /// Coarse-grid points per dimension for spike selection.
    pub grid_per_dim: usize,
    /// Gradient-ascent refinement steps after the coarse argmax.
    pub ascent_steps: usize,
    /// Initial ascent step length (backtracking adapts it).
    pub ascent_step: f64,
    /// Duality-gap target of the amplitude subproblem, relative to the
    /// objective scale.
    pub amplitude_tol: f64,
    /// Iteration cap of the amplitude subproblem.
    pub amplitude_max_iter: usize,
    /// Joint position/amplitude descent steps per outer iteration.
    pub joint_iters: usize,
    /// Stop once the residual certificate peaks below `1 + tau_gap`.
    pub tau_gap: f64,
    /// Drop spikes with `|a|` at or below this after each iteration.
    pub prune_tol: f64,
    /// Merge spikes closer than this (exact duplicates always merge).
    pub merge_radius: f64,
    /// Restrict spike positions to the coarse grid: no ascent, no joint
    /// refinement. Used to compare against finite-grid solvers.
    pub position_grid: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_spikes: 20,
            grid_per_dim: 64,
            ascent_steps: 200,
            ascent_step: 0.25,
            amplitude_tol: 1e-10,
            amplitude_max_iter: 200_000,
            joint_iters: 60,
            tau_gap: 1e-7,
            prune_tol: 1e-8,
            merge_radius: 1e-6,
            position_grid: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_spikes == 0 {
            return Err(Error::InvalidParameter("max_spikes must be >= 1".into()));
        }
        if self.grid_per_dim < 2 {
            return Err(Error::InvalidParameter("grid_per_dim must be >= 2".into()));
        }
        if self.amplitude_max_iter == 0 {
            return Err(Error::InvalidParameter("amplitude_max_iter must be >= 1".into()));
        }
        for (name, v) in [
            ("ascent_step", self.ascent_step),
            ("amplitude_tol", self.amplitude_tol),
            ("tau_gap", self.tau_gap),
            ("prune_tol", self.prune_tol),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.merge_radius.is_finite() && self.merge_radius >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "merge_radius must be nonnegative, got {}",
                self.merge_radius
            )));
        }
        Ok(())
    }
}

/// Recovered measure plus convergence diagnostics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveResult {
    pub measure: DiscreteMeasure,
    /// Objective re-evaluated on the returned measure.
    pub objective: f64,
    /// Peak of `|eta_res|` found at the last spike selection.
    pub certificate_max: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each outer iteration (non-increasing).
    pub objective_trace: Vec<f64>,
}

/// The spike-selection lattice: `per_dim` points per dimension over the
/// whole domain. Exposed so finite-grid reference solvers can share it.
pub fn coarse_grid(domain: &Domain, per_dim: usize) -> Result<Vec<Vec<f64>>> {
    if per_dim < 2 {
        return Err(Error::InvalidParameter("grid needs at least 2 points per dimension".into()));
    }
    let extent = match domain.kind() {
        DomainKind::Torus => 1.0,
        DomainKind::Box => 2.0 * domain.half_width(),
    };
    let spacing = extent * (domain.dim() as f64).sqrt() / per_dim as f64;
    Ok(domain.covering_grid(GridRegion::Full, spacing)?.points)
}

/// Minimizes the objective by alternating spike selection on the residual
/// certificate, an amplitude-only convex solve, joint local refinement,
/// and merge/prune housekeeping. The `seed` only feeds extra random ascent
/// starts; the algorithm is otherwise deterministic.
pub fn solve(problem: &BlassoProblem, config: &SolverConfig, seed: u64) -> Result<SolveResult> {
    config.validate()?;
    let draw = &problem.draw;
    let domain = draw.map().domain().clone();
    let y = &problem.measurements.y;
    let lambda = problem.lambda;
    let grid = coarse_grid(&domain, config.grid_per_dim)?;

    let mut positions: Vec<Vec<f64>> = Vec::new();
    let mut amps: Vec<f64> = Vec::new();
    let mut cols: Vec<Vec<Complex64>> = Vec::new();
    let mut r = residual(&cols, &amps, y);
    let mut obj = objective_value(&r, &amps, lambda);
    let mut trace = vec![obj];
    let mut converged = false;
    let mut certificate_max = 0.0;
    let mut iterations = 0;

    // Merges can free spike slots, so allow a few extra passes beyond one
    // insertion per spike.
    let outer_cap = 4 * config.max_spikes + 8;
    for it in 0..outer_cap {
        iterations = it + 1;
        let p: Vec<Complex64> = r.iter().map(|v| -v / lambda).collect();
        let (x_star, cmax) = select_spike(draw, &domain, &p, &grid, config, seed, it as u64)?;
        if !cmax.is_finite() {
            return Err(Error::Numerical("residual certificate diverged".into()));
        }
        certificate_max = cmax;
        if cmax <= 1.0 + config.tau_gap {
            converged = true;
            break;
        }
        if positions.len() >= config.max_spikes {
            break;
        }

        cols.push(column(draw, &x_star));
        positions.push(x_star);
        amps.push(0.0);
        solve_amplitudes(&cols, y, lambda, config, &mut amps)?;
        if !config.position_grid && config.joint_iters > 0 {
            joint_refine(draw, &domain, y, lambda, &mut positions, &mut amps, &mut cols, config)?;
        }
        merge_and_prune(draw, &domain, y, lambda, &mut positions, &mut amps, &mut cols, config)?;

        r = residual(&cols, &amps, y);
        obj = objective_value(&r, &amps, lambda);
        if !obj.is_finite() {
            return Err(Error::Numerical("objective diverged".into()));
        }
        trace.push(obj);
    }

    let measure = DiscreteMeasure::from_parts(&positions, &amps)?;
    let objective = problem.objective(&measure)?;
    Ok(SolveResult { measure, objective, certificate_max, iterations, converged, objective_trace: trace })
}

/// `eta_res = Phi*[(y - Phi mu) / lambda]`, the dual feasibility gauge of
/// the current iterate; its coefficient vector is retained so the norm
/// entering the stability constant is available.
pub fn residual_certificate(
    problem: &BlassoProblem,
    mu: &DiscreteMeasure,
) -> Result<CertificateFunction> {
    let fw = forward(&problem.draw, mu)?;
    let p: Vec<Complex64> = problem
        .measurements
        .y
        .iter()
        .zip(&fw)
        .map(|(y, f)| (y - f) / problem.lambda)
        .collect();
    Ok(CertificateFunction::from_features(problem.draw.clone(), p))
}

// ---------------------------------------------------------------------------
// Solver internals
// ---------------------------------------------------------------------------

fn column(draw: &FeatureDraw, x: &[f64]) -> Vec<Complex64> {
    (0..draw.m()).map(|k| feature_value(draw.map(), draw.omega(k), x)).collect()
}

fn residual(cols: &[Vec<Complex64>], amps: &[f64], y: &[Complex64]) -> Vec<Complex64> {
    let mut r: Vec<Complex64> = y.iter().map(|v| -v).collect();
    for (c, &a) in cols.iter().zip(amps) {
        if a != 0.0 {
            for (rk, ck) in r.iter_mut().zip(c) {
                *rk += a * ck;
            }
        }
    }
    r
}

fn objective_value(r: &[Complex64], amps: &[f64], lambda: f64) -> f64 {
    let fit = h_norm(r);
    0.5 * fit * fit + lambda * amps.iter().map(|a| a.abs()).sum::<f64>()
}

fn random_point(domain: &Domain, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..domain.dim())
        .map(|_| match domain.kind() {
            DomainKind::Torus => rng.gen::<f64>(),
            DomainKind::Box => rng.gen_range(-domain.half_width()..=domain.half_width()),
        })
        .collect()
}

/// Argmax of `|eta|` over the coarse grid, refined by backtracking ascent
/// from the best grid point and a few seeded random starts.
fn select_spike(
    draw: &FeatureDraw,
    domain: &Domain,
    p: &[Complex64],
    grid: &[Vec<f64>],
    config: &SolverConfig,
    seed: u64,
    round: u64,
) -> Result<(Vec<f64>, f64)> {
    let scores: Result<Vec<f64>> =
        grid.par_iter().map(|x| adjoint_value(draw, p, x).map(f64::abs)).collect();
    let scores = scores?;
    let best = scores
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("coarse grid is never empty");
    let mut best_x = grid[best].clone();
    let mut best_f = scores[best];
    if config.position_grid {
        return Ok((best_x, best_f));
    }

    let mut starts = vec![best_x.clone()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ round.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    for _ in 0..3 {
        starts.push(random_point(domain, &mut rng));
    }
    for start in starts {
        let (x, f) = ascend(draw, domain, p, start, config)?;
        if f > best_f {
            best_f = f;
            best_x = x;
        }
    }
    Ok((best_x, best_f))
}

fn ascend(
    draw: &FeatureDraw,
    domain: &Domain,
    p: &[Complex64],
    mut x: Vec<f64>,
    config: &SolverConfig,
) -> Result<(Vec<f64>, f64)> {
    let mut v = adjoint_value(draw, p, &x)?;
    let mut t = config.ascent_step;
    for _ in 0..config.ascent_steps {
        let g = adjoint_grad(draw, p, &x)?;
        let sign = if v >= 0.0 { 1.0 } else { -1.0 };
        if g.iter().map(|c| c * c).sum::<f64>() < 1e-28 {
            break;
        }
        let raw: Vec<f64> = x.iter().zip(&g).map(|(&xi, &gi)| xi + t * sign * gi).collect();
        let cand = domain.canonicalize(&raw);
        let vc = adjoint_value(draw, p, &cand)?;
        if vc.abs() > v.abs() {
            x = cand;
            v = vc;
            t *= 1.5;
        } else {
            t *= 0.5;
            if t < 1e-14 {
                break;
            }
        }
    }
    Ok((x, v.abs()))
}

/// Proximal gradient on the fixed-support amplitude problem, warm-started
/// from the current amplitudes and run to the configured duality gap.
fn solve_amplitudes(
    cols: &[Vec<Complex64>],
    y: &[Complex64],
    lambda: f64,
    config: &SolverConfig,
    amps: &mut [f64],
) -> Result<()> {
    let s = cols.len();
    if s == 0 {
        return Ok(());
    }
    let m = y.len() as f64;
    let mut gram = DMatrix::zeros(s, s);
    for i in 0..s {
        for j in i..s {
            let g: f64 =
                cols[i].iter().zip(&cols[j]).map(|(a, b)| (a.conj() * b).re).sum::<f64>() / m;
            gram[(i, j)] = g;
            gram[(j, i)] = g;
        }
    }
    let b = DVector::from_iterator(
        s,
        cols.iter()
            .map(|c| c.iter().zip(y).map(|(ck, yk)| (ck.conj() * yk).re).sum::<f64>() / m),
    );
    let y_sq = y.iter().map(|z| z.norm_sqr()).sum::<f64>() / m;
    let lip = gram.symmetric_eigenvalues().max();
    if !(lip.is_finite() && lip > 0.0) {
        return Err(Error::Numerical("amplitude subproblem has no curvature".into()));
    }
    let step = 1.0 / lip;
    let mut a = DVector::from_column_slice(amps);
    let soft = |z: f64, t: f64| z.signum() * (z.abs() - t).max(0.0);
    for it in 0..config.amplitude_max_iter {
        let g = &gram * &a - &b;
        for j in 0..s {
            a[j] = soft(a[j] - step * g[j], step * lambda);
        }
        if it % 8 != 0 {
            continue;
        }
        // Duality gap against the scaled-residual dual point.
        let ga = &gram * &a;
        let r_sq = (a.dot(&ga) - 2.0 * a.dot(&b) + y_sq).max(0.0);
        let corr_max = (&ga - &b).amax();
        let scale = if corr_max > lambda { lambda / corr_max } else { 1.0 };
        let l1: f64 = a.iter().map(|v| v.abs()).sum();
        let primal = 0.5 * r_sq + lambda * l1;
        let gap = primal + 0.5 * scale * scale * r_sq + scale * (a.dot(&b) - y_sq);
        if gap <= config.amplitude_tol * (1.0 + primal.abs()) {
            break;
        }
    }
    for (dst, src) in amps.iter_mut().zip(a.iter()) {
        *dst = *src;
    }
    Ok(())
}

/// Backtracking descent on positions and amplitudes jointly; accepts only
/// strict objective decreases.
#[allow(clippy::too_many_arguments)]
fn joint_refine(
    draw: &FeatureDraw,
    domain: &Domain,
    y: &[Complex64],
    lambda: f64,
    positions: &mut [Vec<f64>],
    amps: &mut [f64],
    cols: &mut [Vec<Complex64>],
    config: &SolverConfig,
) -> Result<()> {
    if positions.is_empty() {
        return Ok(());
    }
    let mut r = residual(cols, amps, y);
    let mut obj = objective_value(&r, amps, lambda);
    let mut t = 0.1;
    for _ in 0..config.joint_iters {
        let mut grad_a = Vec::with_capacity(amps.len());
        let mut grad_x = Vec::with_capacity(amps.len());
        for (x, &a) in positions.iter().zip(amps.iter()) {
            grad_a.push(adjoint_value(draw, &r, x)? + lambda * a.signum());
            grad_x.push(
                adjoint_grad(draw, &r, x)?.into_iter().map(|g| a * g).collect::<Vec<f64>>(),
            );
        }
        let mut moved = false;
        while t >= 1e-14 {
            let cand_pos: Vec<Vec<f64>> = positions
                .iter()
                .zip(&grad_x)
                .map(|(x, gx)| {
                    let raw: Vec<f64> =
                        x.iter().zip(gx).map(|(&xi, &gi)| xi - t * gi).collect();
                    domain.canonicalize(&raw)
                })
                .collect();
            let cand_amp: Vec<f64> =
                amps.iter().zip(&grad_a).map(|(&a, &g)| a - t * g).collect();
            let cand_cols: Vec<Vec<Complex64>> =
                cand_pos.iter().map(|x| column(draw, x)).collect();
            let cand_r = residual(&cand_cols, &cand_amp, y);
            let cand_obj = objective_value(&cand_r, &cand_amp, lambda);
            if cand_obj < obj {
                for (dst, src) in positions.iter_mut().zip(cand_pos) {
                    *dst = src;
                }
                amps.copy_from_slice(&cand_amp);
                for (dst, src) in cols.iter_mut().zip(cand_cols) {
                    *dst = src;
                }
                r = cand_r;
                obj = cand_obj;
                t *= 1.4;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Ok(())
}

/// Merges spike pairs closer than the merge radius and drops amplitudes at
/// or below the prune threshold. Each edit re-solves the amplitudes and is
/// kept only if the objective does not increase, so the outer descent
/// invariant survives the housekeeping.
#[allow(clippy::too_many_arguments)]
fn merge_and_prune(
    draw: &FeatureDraw,
    domain: &Domain,
    y: &[Complex64],
    lambda: f64,
    positions: &mut Vec<Vec<f64>>,
    amps: &mut Vec<f64>,
    cols: &mut Vec<Vec<Complex64>>,
    config: &SolverConfig,
) -> Result<()> {
    let radius = config.merge_radius.max(1e-12);
    let obj = |c: &[Vec<Complex64>], a: &[f64]| objective_value(&residual(c, a, y), a, lambda);
    loop {
        let current = obj(cols, amps);
        let mut pair = None;
        'outer: for i in 0..positions.len() {
            for j in i + 1..positions.len() {
                if domain.dist(&positions[i], &positions[j]) <= radius {
                    pair = Some((i, j));
                    break 'outer;
                }
            }
        }
        let Some((i, j)) = pair else { break };
        let mut cand_pos = positions.clone();
        let mut cand_amp = amps.clone();
        let wi = cand_amp[i].abs();
        let wj = cand_amp[j].abs();
        let merged: Vec<f64> = if wi + wj > 0.0 {
            let off = domain.displacement(&positions[i], &positions[j]);
            let frac = wj / (wi + wj);
            let raw: Vec<f64> =
                positions[i].iter().zip(&off).map(|(&c, &o)| c + frac * o).collect();
            domain.canonicalize(&raw)
        } else {
            positions[i].clone()
        };
        cand_pos[i] = merged;
        cand_amp[i] += cand_amp[j];
        cand_pos.remove(j);
        cand_amp.remove(j);
        let mut cand_cols: Vec<Vec<Complex64>> =
            cand_pos.iter().map(|x| column(draw, x)).collect();
        solve_amplitudes(&cand_cols, y, lambda, config, &mut cand_amp)?;
        if obj(&cand_cols, &cand_amp) <= current + 1e-14 {
            *positions = cand_pos;
            *amps = cand_amp;
            std::mem::swap(cols, &mut cand_cols);
        } else {
            break;
        }
    }

    // Prune: exact zeros (from soft thresholding) leave the objective
    // unchanged; near-zeros are dropped only if the re-solve agrees.
    let current = obj(cols, amps);
    let keep: Vec<usize> =
        (0..amps.len()).filter(|&j| amps[j].abs() > config.prune_tol).collect();
    if keep.len() < amps.len() {
        let cand_pos: Vec<Vec<f64>> = keep.iter().map(|&j| positions[j].clone()).collect();
        let mut cand_amp: Vec<f64> = keep.iter().map(|&j| amps[j]).collect();
        let cand_cols: Vec<Vec<Complex64>> = keep.iter().map(|&j| cols[j].clone()).collect();
        let mut cand_amp_solved = cand_amp.clone();
        solve_amplitudes(&cand_cols, y, lambda, config, &mut cand_amp_solved)?;
        if obj(&cand_cols, &cand_amp_solved) <= obj(&cand_cols, &cand_amp) {
            cand_amp = cand_amp_solved;
        }
        if obj(&cand_cols, &cand_amp) <= current + 1e-14 {
            *positions = cand_pos;
            *amps = cand_amp;
            *cols = cand_cols;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Stability diagnostics
// ---------------------------------------------------------------------------

/// `C(lambda, delta, v) = 2 delta v + 2 lambda v^2 + delta^2 / (2 lambda)`:
/// the error budget a nondegenerate certificate with coefficient norm `v`
/// buys at noise level `delta`.
pub fn stability_constant(lambda: f64, delta: f64, v: f64) -> f64 {
    2.0 * delta * v + 2.0 * lambda * v * v + delta * delta / (2.0 * lambda)
}

/// How the recovered measure violates or honors the stability inequality
/// `lhs_far + lhs_near <= c_val`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StabilityReport {
    pub c_a: f64,
    pub c_b: f64,
    pub lambda: f64,
    pub delta: f64,
    pub p_norm: f64,
    /// `stability_constant(lambda, delta, p_norm)`.
    pub c_val: f64,
    /// `c_b` times the recovered mass in the far region.
    pub lhs_far: f64,
    /// `c_a * sum_i sum_{near i} ||x_hat - x_i||^2 |a_hat|`.
    pub lhs_near: f64,
    /// `|integral over ball_j of d(mu_hat - mu_0)|` per true spike.
    pub region_mass_errors: Vec<f64>,
    pub satisfied: bool,
}

/// Evaluates the stability inequality for a recovered measure against the
/// true one. The partition centers must coincide with the true support;
/// `c_a`/`c_b` are the certificate's curvature and far-gap constants and
/// `p_norm` its coefficient norm.
#[allow(clippy::too_many_arguments)]
pub fn stability_metrics(
    true_mu: &DiscreteMeasure,
    recovered_mu: &DiscreteMeasure,
    partition: &RegionPartition,
    c_a: f64,
    c_b: f64,
    lambda: f64,
    delta: f64,
    p_norm: f64,
) -> Result<StabilityReport> {
    for (name, v) in [("c_a", c_a), ("c_b", c_b), ("lambda", lambda)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
        }
    }
    for (name, v) in [("delta", delta), ("p_norm", p_norm)] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "{name} must be nonnegative, got {v}"
            )));
        }
    }
    let domain = partition.domain();
    true_mu.check_dim(domain.dim())?;
    recovered_mu.check_dim(domain.dim())?;
    let centers = partition.centers();
    if centers.len() != true_mu.len() {
        return Err(Error::InvalidParameter(format!(
            "partition has {} centers but the true measure has {} spikes",
            centers.len(),
            true_mu.len()
        )));
    }
    // Match each true spike to one center.
    let mut center_amp = vec![None; centers.len()];
    for atom in &true_mu.atoms {
        let slot = centers
            .iter()
            .enumerate()
            .filter(|(i, c)| center_amp[*i].is_none() && domain.dist(c, &atom.x) <= 1e-9)
            .map(|(i, _)| i)
            .next();
        match slot {
            Some(i) => center_amp[i] = Some(atom.a),
            None => {
                return Err(Error::InvalidParameter(
                    "partition centers must coincide with the true support".into(),
                ))
            }
        }
    }
    let center_amp: Vec<f64> = center_amp.into_iter().map(|a| a.unwrap_or(0.0)).collect();

    let mut far_mass = 0.0;
    let mut near_sq = 0.0;
    let mut region_mass = vec![0.0; centers.len()];
    for atom in &recovered_mu.atoms {
        match partition.classify(&atom.x) {
            Region::Far => far_mass += atom.a.abs(),
            Region::Near(i) => {
                let dist = domain.dist_l2(&atom.x, &centers[i]);
                near_sq += dist * dist * atom.a.abs();
                region_mass[i] += atom.a;
            }
        }
    }
    let region_mass_errors: Vec<f64> =
        region_mass.iter().zip(&center_amp).map(|(got, want)| (got - want).abs()).collect();
    let c_val = stability_constant(lambda, delta, p_norm);
    let lhs_far = c_b * far_mass;
    let lhs_near = c_a * near_sq;
    Ok(StabilityReport {
        c_a,
        c_b,
        lambda,
        delta,
        p_norm,
        c_val,
        lhs_far,
        lhs_near,
        region_mass_errors,
        satisfied: lhs_far + lhs_near <= c_val,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certificates::{
        build_pre_certificate, verify_nondegeneracy, CertificateSource, InterpolationSystem,
        Verdict,
    };
    use crate::domain::SepNorm;
    use crate::features::{draw_features, FeatureFamily, FeatureMap};
    use crate::kernels::{acceptable_report, KernelFamily, KernelModel};
    use proptest::prelude::*;
    use rand_distr::{Distribution, Normal};

    fn wg_draw(half_width: f64, m: usize, seed: u64) -> FeatureDraw {
        let dom = Domain::cube(1, half_width, SepNorm::L2).unwrap();
        let map =
            FeatureMap::new(FeatureFamily::WeightedGaussianFourier { sigma: 1.0 }, dom).unwrap();
        draw_features(&map, m, seed).unwrap()
    }

    fn grid_max_eta(draw: &FeatureDraw, p: &[Complex64], per_dim: usize) -> f64 {
        coarse_grid(draw.map().domain(), per_dim)
            .unwrap()
            .iter()
            .map(|x| adjoint_value(draw, p, x).unwrap().abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn stability_constant_matches_hand_values() {
        assert_eq!(stability_constant(1.0, 1.0, 0.0), 0.5);
        assert_eq!(stability_constant(1.0, 1.0, 1.0), 4.5);
    }

    #[test]
    fn exact_recovery_scores_zero_error() {
        let dom = Domain::cube(1, 8.0, SepNorm::L2).unwrap();
        let mu = DiscreteMeasure::from_parts(&[vec![-3.0], vec![2.0]], &[1.0, -0.5]).unwrap();
        let partition = dom.partition(&mu.positions(), 0.7).unwrap();
        let rep =
            stability_metrics(&mu, &mu, &partition, 0.04, 0.17, 1e-3, 0.0, 1.0).unwrap();
        assert_eq!(rep.lhs_far, 0.0);
        assert_eq!(rep.lhs_near, 0.0);
        assert!(rep.region_mass_errors.iter().all(|&e| e == 0.0));
        assert!(rep.satisfied);
    }

    #[test]
    fn stability_report_separates_far_and_near_errors() {
        let dom = Domain::cube(1, 8.0, SepNorm::L2).unwrap();
        let truth = DiscreteMeasure::from_parts(&[vec![-3.0], vec![2.0]], &[1.0, -0.5]).unwrap();
        // One spike shifted 0.1 inside its ball, one far spurious spike.
        let rec = DiscreteMeasure::from_parts(
            &[vec![-2.9], vec![2.0], vec![6.0]],
            &[0.9, -0.5, 0.2],
        )
        .unwrap();
        let partition = dom.partition(&truth.positions(), 0.7).unwrap();
        let rep =
            stability_metrics(&truth, &rec, &partition, 2.0, 3.0, 1.0, 1.0, 1.0).unwrap();
        assert!((rep.lhs_near - 2.0 * 0.01 * 0.9).abs() < 1e-12);
        assert!((rep.lhs_far - 3.0 * 0.2).abs() < 1e-12);
        assert!((rep.region_mass_errors[0] - 0.1).abs() < 1e-12);
        assert_eq!(rep.region_mass_errors[1], 0.0);
        assert!((rep.c_val - 4.5).abs() < 1e-12);
        assert!(rep.satisfied);

        // Centers must be the true support.
        let wrong = dom.partition(&[vec![0.0], vec![1.0]], 0.7).unwrap();
        assert!(matches!(
            stability_metrics(&truth, &rec, &wrong, 2.0, 3.0, 1.0, 1.0, 1.0),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn zero_measure_certificate_is_scaled_backprojection() {
        let draw = wg_draw(4.0, 120, 0xE7A);
        let truth = DiscreteMeasure::from_parts(&[vec![0.4]], &[1.0]).unwrap();
        let y = MeasurementSet::from_measure(&draw, &truth).unwrap();
        let lambda = 0.05;
        let problem = BlassoProblem::new(y.clone(), draw.clone(), lambda).unwrap();
        let cert = residual_certificate(&problem, &DiscreteMeasure::default()).unwrap();
        let p: Vec<Complex64> = y.y.iter().map(|v| v / lambda).collect();
        for x in [[-3.0], [-0.5], [0.4], [1.7]] {
            let want = adjoint_value(&draw, &p, &x).unwrap();
            assert!((cert.value(&x).unwrap() - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
        assert!((cert.p_norm().unwrap() - h_norm(&p)).abs() < 1e-12);
    }

    #[test]
    fn problem_and_config_validation() {
        let draw = wg_draw(4.0, 50, 1);
        let y = MeasurementSet::noiseless(vec![Complex64::new(1.0, 0.0); 50]);
        assert!(matches!(
            BlassoProblem::new(y.clone(), draw.clone(), 0.0),
            Err(Error::InvalidParameter(_))
        ));
        let short = MeasurementSet::noiseless(vec![Complex64::new(1.0, 0.0); 49]);
        assert!(matches!(
            BlassoProblem::new(short, draw.clone(), 0.1),
            Err(Error::DimensionMismatch { .. })
        ));
        let config = SolverConfig { tau_gap: 0.0, ..SolverConfig::default() };
        let problem = BlassoProblem::new(y, draw, 0.1).unwrap();
        assert!(matches!(solve(&problem, &config, 0), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn huge_lambda_yields_the_zero_measure() {
        let draw = wg_draw(8.0, 300, 0x1A3B);
        let truth = DiscreteMeasure::from_parts(&[vec![0.5]], &[1.0]).unwrap();
        let y = MeasurementSet::from_measure(&draw, &truth).unwrap();
        let p: Vec<Complex64> = y.y.clone();
        let lambda = 1.05 * grid_max_eta(&draw, &p, 8192);
        let problem = BlassoProblem::new(y.clone(), draw, lambda).unwrap();
        let out = solve(&problem, &SolverConfig::default(), 3).unwrap();
        assert!(out.converged);
        assert!(out.measure.is_empty());
        assert!(out.certificate_max <= 1.0 + 1e-7);
        let half_data = 0.5 * h_norm(&y.y).powi(2);
        assert!((out.objective - half_data).abs() <= 1e-12 * half_data);
        assert_eq!(out.iterations, 1);
    }

    #[test]
    fn single_spike_noiseless_recovery() {
        let draw = wg_draw(2.0, 500, 0xB1A5);
        let truth = DiscreteMeasure::from_parts(&[vec![0.3]], &[1.0]).unwrap();
        let y = MeasurementSet::from_measure(&draw, &truth).unwrap();
        let problem = BlassoProblem::new(y, draw.clone(), 1e-4).unwrap();
        let config = SolverConfig { merge_radius: 4.9e-3, ..SolverConfig::default() };
        let out = solve(&problem, &config, 11).unwrap();

        assert!(out.converged, "certificate peak {}", out.certificate_max);
        assert_eq!(out.measure.len(), 1);
        let atom = &out.measure.atoms[0];
        assert!((atom.x[0] - 0.3).abs() <= 1e-3, "position {}", atom.x[0]);
        assert!((atom.a - 1.0).abs() <= 1e-2, "amplitude {}", atom.a);

        // First-order optimality: saturation at the spike, feasibility on a
        // dense probe grid.
        let cert = residual_certificate(&problem, &out.measure).unwrap();
        assert!((cert.value(&atom.x).unwrap() - 1.0).abs() <= 1e-4);
        let p = cert.feature_coeffs().unwrap().to_vec();
        let sup = grid_max_eta(&draw, &p, 10_000);
        assert!(sup <= 1.0 + 2e-7, "probe sup {sup}");
    }

    #[test]
    fn three_separated_spikes_are_recovered_exactly() {
        let draw = wg_draw(8.0, 2000, 0x3A);
        let truth = DiscreteMeasure::from_parts(
            &[vec![-5.92], vec![0.0], vec![5.92]],
            &[1.0, 0.8, -1.2],
        )
        .unwrap();
        let y = MeasurementSet::from_measure(&draw, &truth).unwrap();
        let problem = BlassoProblem::new(y, draw, 1e-3).unwrap();
        let config = SolverConfig {
            max_spikes: 10,
            merge_radius: 5.9e-3,
            ..SolverConfig::default()
        };
        let out = solve(&problem, &config, 2).unwrap();

        assert!(out.converged);
        assert_eq!(out.measure.len(), 3);
        for atom in &truth.atoms {
            let best = out
                .measure
                .atoms
                .iter()
                .map(|rec| (rec.x[0] - atom.x[0]).abs())
                .fold(f64::INFINITY, f64::min);
            assert!(best <= 1e-2, "spike at {} missed by {best}", atom.x[0]);
        }
        // Cheap descent invariant: the trace never rises.
        for w in out.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "objective rose: {} -> {}", w[0], w[1]);
        }
        // Stored objective is the re-evaluated one.
        assert!((out.objective - problem.objective(&out.measure).unwrap()).abs() <= 1e-10);
    }

    #[test]
    fn grid_constrained_solver_matches_a_dense_lasso() {
        // Same 1000 columns for both solvers; the sliding solver in grid
        // mode is column generation for the dense problem. The cutoff keeps
        // neighboring grid columns decorrelated so coordinate descent
        // converges tightly.
        let dom = Domain::torus(1, SepNorm::Inf).unwrap();
        let map = FeatureMap::new(FeatureFamily::FejerFourier { f_c: 250 }, dom.clone()).unwrap();
        let draw = draw_features(&map, 200, 0x9D).unwrap();
        let truth = DiscreteMeasure::from_parts(
            &[vec![0.1004], vec![0.4031], vec![0.7517]],
            &[1.0, -0.7, 0.5],
        )
        .unwrap();
        let y = MeasurementSet::from_measure(&draw, &truth).unwrap();
        let grid = coarse_grid(&dom, 1000).unwrap();
        assert_eq!(grid.len(), 1000);

        let p: Vec<Complex64> = y.y.clone();
        let lambda = 0.05 * grid_max_eta(&draw, &p, 1000);
        let problem = BlassoProblem::new(y.clone(), draw.clone(), lambda).unwrap();
        let config = SolverConfig {
            position_grid: true,
            grid_per_dim: 1000,
            max_spikes: 40,
            tau_gap: 1e-9,
            amplitude_tol: 1e-13,
            ..SolverConfig::default()
        };
        let out = solve(&problem, &config, 0).unwrap();
        assert!(out.converged);

        // Dense coordinate-descent oracle over all 1000 columns.
        let m = 200.0;
        let cols: Vec<Vec<Complex64>> = grid.iter().map(|x| column(&draw, x)).collect();
        let s = cols.len();
        let mut gram = vec![vec![0.0; s]; s];
        for i in 0..s {
            for j in i..s {
                let g: f64 = cols[i]
                    .iter()
                    .zip(&cols[j])
                    .map(|(a, b)| (a.conj() * b).re)
                    .sum::<f64>()
                    / m;
                gram[i][j] = g;
                gram[j][i] = g;
            }
        }
        let b: Vec<f64> = cols
            .iter()
            .map(|c| c.iter().zip(&y.y).map(|(ck, yk)| (ck.conj() * yk).re).sum::<f64>() / m)
            .collect();
        let y_sq = y.y.iter().map(|z| z.norm_sqr()).sum::<f64>() / m;
        let mut a = vec![0.0f64; s];
        let mut corr = b.clone();
        for epoch in 0..50_000 {
            for j in 0..s {
                let old = a[j];
                let z = corr[j] + gram[j][j] * old;
                let new = z.signum() * (z.abs() - lambda).max(0.0) / gram[j][j];
                if new != old {
                    let d = new - old;
                    for l in 0..s {
                        corr[l] -= gram[l][j] * d;
                    }
                    a[j] = new;
                }
            }
            if epoch % 10 != 9 {
                continue;
            }
            // Duality gap from the running negative gradient corr = b - G a.
            let lin: f64 = a.iter().zip(&b).map(|(ai, bi)| ai * bi).sum();
            let a_corr: f64 = a.iter().zip(&corr).map(|(ai, ci)| ai * ci).sum();
            let r_sq = y_sq - lin - a_corr;
            let primal = 0.5 * r_sq + lambda * a.iter().map(|v| v.abs()).sum::<f64>();
            let gmax = corr.iter().fold(0.0f64, |acc, c| acc.max(c.abs()));
            let c = if gmax > lambda { lambda / gmax } else { 1.0 };
            let gap = primal + 0.5 * c * c * r_sq + c * (lin - y_sq);
            if gap <= 1e-10 * (1.0 + primal.abs()) {
                break;
            }
        }
        let quad: f64 = (0..s)
            .map(|i| a[i] * (0..s).map(|j| gram[i][j] * a[j]).sum::<f64>())
            .sum();
        let lin: f64 = (0..s).map(|i| a[i] * b[i]).sum();
        let oracle_obj =
            0.5 * (quad - 2.0 * lin + y_sq) + lambda * a.iter().map(|v| v.abs()).sum::<f64>();

        let rel = (out.objective - oracle_obj).abs() / oracle_obj;
        assert!(rel <= 1e-6, "solver {} vs oracle {oracle_obj} (rel {rel})", out.objective);
    }

    #[test]
    fn stability_inequality_holds_under_certified_certificates() {
        // One true spike, noise scaled to an exact level, lambda = delta.
        // Whenever the interpolation certificate is grid-certified, the
        // recovered measure must honor the error budget driven by the
        // certificate's own margins.
        let dom = Domain::cube(1, 4.0, SepNorm::L2).unwrap();
        let map = FeatureMap::new(FeatureFamily::WeightedGaussianFourier { sigma: 1.0 }, dom)
            .unwrap();
        let kernel = KernelModel::new(
            KernelFamily::Gaussian { sigma: 1.0 },
            map.domain().clone(),
        )
        .unwrap();
        let report = acceptable_report(&kernel, 1, None).unwrap();
        let truth = DiscreteMeasure::from_parts(&[vec![0.2]], &[1.0]).unwrap();
        let delta = 0.05;

        let mut certified = 0;
        for seed in 0..20u64 {
            let draw = draw_features(&map, 10_000, 0x7E0 + seed).unwrap();
            let clean = forward(&draw, &truth).unwrap();
            let normal = Normal::new(0.0, 1.0).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(0xA05E + seed);
            let mut w: Vec<Complex64> = (0..clean.len())
                .map(|_| Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng)))
                .collect();
            let scale = delta / h_norm(&w);
            for z in &mut w {
                *z *= scale;
            }
            let y: Vec<Complex64> = clean.iter().zip(&w).map(|(c, n)| c + n).collect();

            let system =
                InterpolationSystem::empirical(&draw, &truth.positions(), &truth.signs())
                    .unwrap();
            let cert =
                build_pre_certificate(&system, CertificateSource::Empirical(&draw)).unwrap();
            let partition =
                map.domain().partition(&truth.positions(), report.eps_near).unwrap();
            let verdict =
                verify_nondegeneracy(&cert, &partition, map.lipschitz(), &report).unwrap();
            if verdict.verdict != Verdict::Certified {
                continue;
            }
            certified += 1;

            let problem =
                BlassoProblem::new(MeasurementSet::noiseless(y), draw, delta).unwrap();
            let config = SolverConfig { merge_radius: 4.9e-3, ..SolverConfig::default() };
            let out = solve(&problem, &config, seed).unwrap();
            assert!(out.converged, "seed {seed}");

            // Continuum constants certified by the grid margins.
            let c_b = verdict.margin_far - verdict.required_far;
            let c_a = 0.5 * (verdict.margin_near - verdict.required_near);
            let rep = stability_metrics(
                &truth,
                &out.measure,
                &partition,
                c_a,
                c_b,
                problem.lambda,
                delta,
                cert.p_norm().unwrap(),
            )
            .unwrap();
            assert!(
                rep.satisfied,
                "seed {seed}: lhs {} + {} vs budget {}",
                rep.lhs_far, rep.lhs_near, rep.c_val
            );
        }
        assert!(certified >= 15, "only {certified} of 20 runs certified");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn amplitude_solve_reaches_lasso_optimality(
            seed in 0u64..1000,
            lambda in 1e-3f64..0.5,
            s in 1usize..4,
        ) {
            let draw = wg_draw(4.0, 64, seed);
            let positions: Vec<Vec<f64>> =
                (0..s).map(|j| vec![-2.0 + 4.0 * j as f64 / s as f64]).collect();
            let cols: Vec<Vec<Complex64>> =
                positions.iter().map(|x| column(&draw, x)).collect();
            let truth = DiscreteMeasure::from_parts(
                &positions,
                &(0..s).map(|j| 1.0 - 0.4 * j as f64).collect::<Vec<_>>(),
            ).unwrap();
            let y = forward(&draw, &truth).unwrap();
            let mut amps = vec![0.0; s];
            let config = SolverConfig { amplitude_tol: 1e-14, ..SolverConfig::default() };
            solve_amplitudes(&cols, &y, lambda, &config, &mut amps).unwrap();

            // KKT: correlations bounded by lambda, saturated with the right
            // sign wherever an amplitude survives.
            let m = y.len() as f64;
            let r = residual(&cols, &amps, &y);
            for (j, c) in cols.iter().enumerate() {
                let corr: f64 =
                    c.iter().zip(&r).map(|(ck, rk)| (ck.conj() * rk).re).sum::<f64>() / m;
                prop_assert!(corr.abs() <= lambda * (1.0 + 1e-5) + 1e-9);
                if amps[j].abs() > 1e-9 {
                    prop_assert!((corr + lambda * amps[j].signum()).abs() <= lambda * 1e-4 + 1e-9);
                }
            }
        }
    }
}
