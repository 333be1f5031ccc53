//! Grid-certified nondegeneracy verdicts and sample-complexity predictions.
//!
//! A certificate is nondegenerate when `|eta| < 1` away from the spikes
//! and the sign-corrected Hessian is positive definite near them. The
//! verifier evaluates both on covering grids: in certified mode the grid
//! spacing and margin floors come from the Lipschitz constants, so a
//! `Certified` verdict is a proof over the continuum; heuristic mode
//! checks caller-chosen grids with zero slack and certifies only the
//! sampled points.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{GridRegion, RegionPartition};
use crate::features::LipschitzBundle;
use crate::kernels::AcceptableKernelReport;
use crate::{Error, Result};

use super::certificate::CertificateFunction;
use super::sym_eig_range;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// Margins clear the grid slack: nondegenerate on the whole domain
    /// (certified mode) or on every sampled point (heuristic mode).
    Certified,
    /// A spike or grid point violates `|eta| < 1` or the curvature sign.
    Degenerate,
    /// Margins are positive but below the Lipschitz slack.
    Inconclusive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyMode {
    Certified,
    Heuristic,
}

/// Grid margins and the verdict they support.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NondegeneracyReport {
    pub verdict: Verdict,
    pub mode: VerifyMode,
    /// `min 1 - |eta|` over the far grid.
    pub margin_far: f64,
    /// `min lambda_min(-sign(eta(x_j)) hess eta)` over the near grids.
    pub margin_near: f64,
    pub spacing_far: f64,
    pub spacing_near: f64,
    /// Margin floors demanded by the Lipschitz extension (certified mode);
    /// zero in heuristic mode.
    pub required_far: f64,
    pub required_near: f64,
    /// Lipschitz constants of `eta` and `hess eta` used for the slack;
    /// zero in heuristic mode.
    pub m0: f64,
    pub m2: f64,
    pub far_points: usize,
    pub near_points: usize,
}

/// Certified verification: grids spaced so that clearing one quarter of
/// the report's margins on the grid extends to the continuum.
///
/// Preconditions: the partition radius must equal the report's near
/// radius, the centers must be separated by the report's `Delta`, and the
/// spike count must fit the report's budget.
pub fn verify_nondegeneracy(
    cert: &CertificateFunction,
    partition: &RegionPartition,
    lipschitz: LipschitzBundle,
    report: &AcceptableKernelReport,
) -> Result<NondegeneracyReport> {
    let s = partition.centers().len();
    if s == 0 {
        return Err(Error::EmptyInput("verification needs at least one spike"));
    }
    if s > report.s_max {
        return Err(Error::InvalidParameter(format!(
            "{s} spikes exceed the report budget s_max = {}",
            report.s_max
        )));
    }
    if !(report.eps_eta > 0.0 && report.lambda_eta > 0.0) {
        return Err(Error::InvalidParameter(
            "kernel report does not certify positive nondegeneracy margins".into(),
        ));
    }
    if (partition.radius() - report.eps_near).abs() > 1e-9 * report.eps_near {
        return Err(Error::InvalidParameter(format!(
            "partition radius {} must equal the report's near radius {}",
            partition.radius(),
            report.eps_near
        )));
    }
    if s > 1 {
        let sep = partition.domain().min_separation(partition.centers());
        if sep < report.delta_sep * (1.0 - 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "spikes separated by {sep} but the report requires {}",
                report.delta_sep
            )));
        }
    }

    let sf = s as f64;
    let m0 = 4.0 * sf * lipschitz.l01 * lipschitz.l1;
    let m2 = 4.0 * sf * lipschitz.l01 * lipschitz.l3;
    let spacing_far = report.eps_eta / (4.0 * m0);
    let spacing_near = report.lambda_eta / (4.0 * m2);
    let scan = scan_grids(cert, partition, spacing_far, spacing_near)?;
    // A grid margin of M * spacing survives subtracting the worst drift
    // between grid points, with the same margin left over.
    let required_far = m0 * spacing_far;
    let required_near = m2 * spacing_near;
    let verdict = if scan.spike_violation || scan.margin_far <= 0.0 || scan.margin_near <= 0.0 {
        Verdict::Degenerate
    } else if scan.margin_far >= required_far && scan.margin_near >= required_near {
        Verdict::Certified
    } else {
        Verdict::Inconclusive
    };
    Ok(NondegeneracyReport {
        verdict,
        mode: VerifyMode::Certified,
        margin_far: scan.margin_far,
        margin_near: scan.margin_near,
        spacing_far,
        spacing_near,
        required_far,
        required_near,
        m0,
        m2,
        far_points: scan.far_points,
        near_points: scan.near_points,
    })
}

/// Sampled check at caller-chosen spacings with zero Lipschitz slack:
/// `Certified` here means no sampled point violated the conditions, not a
/// proof over the continuum.
pub fn verify_nondegeneracy_heuristic(
    cert: &CertificateFunction,
    partition: &RegionPartition,
    spacing_far: f64,
    spacing_near: f64,
) -> Result<NondegeneracyReport> {
    if partition.centers().is_empty() {
        return Err(Error::EmptyInput("verification needs at least one spike"));
    }
    let scan = scan_grids(cert, partition, spacing_far, spacing_near)?;
    let verdict = if scan.spike_violation || scan.margin_far <= 0.0 || scan.margin_near <= 0.0 {
        Verdict::Degenerate
    } else {
        Verdict::Certified
    };
    Ok(NondegeneracyReport {
        verdict,
        mode: VerifyMode::Heuristic,
        margin_far: scan.margin_far,
        margin_near: scan.margin_near,
        spacing_far,
        spacing_near,
        required_far: 0.0,
        required_near: 0.0,
        m0: 0.0,
        m2: 0.0,
        far_points: scan.far_points,
        near_points: scan.near_points,
    })
}

struct GridScan {
    margin_far: f64,
    margin_near: f64,
    far_points: usize,
    near_points: usize,
    spike_violation: bool,
}

fn scan_grids(
    cert: &CertificateFunction,
    partition: &RegionPartition,
    spacing_far: f64,
    spacing_near: f64,
) -> Result<GridScan> {
    let domain = partition.domain();

    // Ball orientations come from the certificate itself: an interpolating
    // certificate has eta(x_j) = sign(a_j). Overshooting 1 at a spike is
    // degenerate outright.
    let mut spike_violation = false;
    let mut signs = Vec::with_capacity(partition.centers().len());
    for x in partition.centers() {
        let v = cert.value(x)?;
        if v.abs() > 1.0 + 1e-8 {
            spike_violation = true;
        }
        signs.push(if v >= 0.0 { 1.0 } else { -1.0 });
    }

    let far = domain.covering_grid(
        GridRegion::Far { centers: partition.centers(), radius: partition.radius() },
        spacing_far,
    )?;
    if far.points.is_empty() {
        return Err(Error::InvalidParameter(
            "far region is empty; the near balls cover the whole domain".into(),
        ));
    }
    let far_margins: Result<Vec<f64>> =
        far.points.par_iter().map(|x| cert.value(x).map(|v| 1.0 - v.abs())).collect();
    let margin_far = far_margins?.into_iter().fold(f64::INFINITY, f64::min);

    let mut margin_near = f64::INFINITY;
    let mut near_points = 0usize;
    for (center, sg) in partition.centers().iter().zip(&signs) {
        let grid = domain.covering_grid(
            GridRegion::NearBall { center, radius: partition.radius() },
            spacing_near,
        )?;
        near_points += grid.points.len();
        let ball_margins: Result<Vec<f64>> = grid
            .points
            .par_iter()
            .map(|x| cert.hess(x).map(|h| -sym_eig_range(&(h * *sg)).1))
            .collect();
        margin_near = ball_margins?.into_iter().fold(margin_near, f64::min);
    }

    Ok(GridScan {
        margin_far,
        margin_near,
        far_points: far.points.len(),
        near_points,
        spike_violation,
    })
}

// ---------------------------------------------------------------------------
// Sample-complexity predictions
// ---------------------------------------------------------------------------

/// Which construction's sample bound to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleCountMode {
    /// Block-golfing construction: linear in `s` up to polylog factors.
    Golfing,
    /// Fixed-sign pre-certificate analysis: quadratic in `s`.
    EtaV,
    /// Pre-certificate analysis with iid random spike signs.
    EtaVRandomSigns,
}

/// Evaluates the predicted feature count for `s` spikes in dimension `d`,
/// up to a universal constant carried implicitly (set to 1). `b_x` bounds
/// the domain radius (it sizes the far covering net) and `rho` is the
/// failure probability.
pub fn predicted_sample_counts(
    s: usize,
    d: usize,
    report: &AcceptableKernelReport,
    lipschitz: LipschitzBundle,
    b_x: f64,
    rho: f64,
    mode: SampleCountMode,
) -> Result<f64> {
    if s == 0 {
        return Err(Error::EmptyInput("sample-count prediction needs at least one spike"));
    }
    if d != report.d {
        return Err(Error::InvalidParameter(format!(
            "prediction for d = {d} against a report built for d = {}",
            report.d
        )));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "failure budget rho must lie in (0, 1), got {rho}"
        )));
    }
    if !(b_x.is_finite() && b_x > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "domain radius bound must be positive, got {b_x}"
        )));
    }
    let (eps, lam) = (report.eps_eta, report.lambda_eta);
    if !(eps > 0.0 && lam > 0.0) {
        return Err(Error::InvalidParameter(
            "kernel report does not certify positive nondegeneracy margins".into(),
        ));
    }

    let lip = lipschitz;
    let df = d as f64;
    let sf = s as f64;
    let (b0, b2) = (report.b_0, report.b_2);
    // Covering numbers of the far region and the near balls.
    let n0 = 1.0 + df * lip.l01 * lip.l1 * b_x / eps;
    let n2 = 1.0 + df * lip.l01 * lip.l3 * report.eps_near / lam;
    // Clamped below so the s = d = 1 corner keeps a positive log.
    let ln_sd = (sf * df).ln().max(std::f64::consts::LN_2);
    let ln_sd_rho = (sf * df / rho).ln();
    let ln_inv_rho = (1.0 / rho).ln();
    // log((s N_i)^d / rho) splits as d ln(s N_i) + ln(1/rho).
    let cover0 = df * (sf * n0).ln();
    let cover2 = df * (sf * n2).ln();

    let value = match mode {
        SampleCountMode::Golfing => {
            let h = eps.min(b0 * lam / b2).min(1.0);
            let log_eval = (lip.l0 / eps + lip.l2 / lam).ln();
            let mut sum = df * df * (lip.l01 * b0 / h).powi(2) * ln_sd * ln_sd_rho;
            for (li, bi, alpha, cover) in
                [(lip.l0, b0, eps, cover0), (lip.l2, b2, lam, cover2)]
            {
                let lbar = ((df * li * li / (alpha * alpha))
                    .max(df.sqrt() * li * lip.l01 / alpha)
                    + (li * li / (bi * bi)).max(li * lip.l01 / bi))
                    * log_eval;
                sum += lbar * (cover + ln_inv_rho + ln_inv_rho * cover / ln_sd);
            }
            sf * sum
        }
        SampleCountMode::EtaV => {
            let l_cal = |bi: f64, alpha: f64| (lip.l01 * bi / alpha).powi(2);
            let l_bar = |li: f64, alpha: f64| (li / alpha) * (li / alpha + lip.l01);
            let quadratic = sf * (l_cal(b0, eps) + l_cal(b2, lam)) * ln_sd_rho;
            let grids = l_bar(lip.l0, eps) * (cover0 + ln_inv_rho)
                + l_bar(lip.l2, lam) * (cover2 + ln_inv_rho);
            sf * (quadratic + grids)
        }
        SampleCountMode::EtaVRandomSigns => {
            let l_cal = |bi: f64, alpha: f64| (lip.l01 * bi / alpha).powi(2);
            let l_bar = |li: f64, alpha: f64| (li / alpha) * (li / alpha + lip.l01);
            sf * ln_sd_rho
                * ((l_cal(b0, eps) + l_bar(lip.l0, eps)) * (cover0 + ln_inv_rho)
                    + (df * df * l_cal(b2, lam) + l_bar(lip.l2, lam))
                        * (cover2 + ln_inv_rho))
        }
    };
    Ok(value)
}
