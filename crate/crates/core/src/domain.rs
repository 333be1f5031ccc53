//! Recovery domains, discrete measures, and covering grids.
//!
//! A [`Domain`] is either the d-dimensional torus (unit period per
//! coordinate) or a centered box `[-half_width, half_width]^d`. The domain
//! fixes the metric used for spike separation and near-region membership:
//! either the sup norm or the Euclidean norm, chosen at construction.
//!
//! Covering grids are the workhorse of certified verification: every bound
//! proved on a grid is promoted to the continuum through a Lipschitz slack,
//! so the grid constructor guarantees a Euclidean covering radius no larger
//! than the requested spacing.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Hard cap on covering-grid sizes; beyond this the caller must coarsen.
pub const GRID_POINT_CAP: u64 = 10_000_000;

// ---------------------------------------------------------------------------
// Domain
// ---------------------------------------------------------------------------

/// Norm used for separation, near-ball membership, and diameter.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum SepNorm {
    #[serde(rename = "inf")]
    Inf,
    #[serde(rename = "l2")]
    L2,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainKind {
    Torus,
    Box,
}

/// A recovery domain: torus or centered box with a separation norm.
///
/// Torus coordinates live on `R mod 1`; any real vector is a valid torus
/// point and distances wrap. `half_width` is fixed to `0.5` on the torus so
/// that the box and torus expose the same bounding interface.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DomainRepr", into = "DomainRepr")]
pub struct Domain {
    kind: DomainKind,
    d: usize,
    half_width: f64,
    sep_norm: SepNorm,
}

/// Raw serde image of [`Domain`]; validated on the way in.
#[derive(Serialize, Deserialize)]
struct DomainRepr {
    kind: DomainKind,
    d: usize,
    half_width: f64,
    sep_norm: SepNorm,
}

impl TryFrom<DomainRepr> for Domain {
    type Error = Error;
    fn try_from(r: DomainRepr) -> Result<Self> {
        match r.kind {
            DomainKind::Torus => {
                if (r.half_width - 0.5).abs() > 1e-12 {
                    return Err(Error::InvalidParameter(format!(
                        "torus half_width must be 0.5, got {}",
                        r.half_width
                    )));
                }
                Domain::torus(r.d, r.sep_norm)
            }
            DomainKind::Box => Domain::cube(r.d, r.half_width, r.sep_norm),
        }
    }
}

impl From<Domain> for DomainRepr {
    fn from(d: Domain) -> Self {
        DomainRepr {
            kind: d.kind,
            d: d.d,
            half_width: d.half_width,
            sep_norm: d.sep_norm,
        }
    }
}

impl Domain {
    /// Unit-period torus in dimension `d`.
    pub fn torus(d: usize, sep_norm: SepNorm) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParameter("domain dimension must be >= 1".into()));
        }
        Ok(Domain { kind: DomainKind::Torus, d, half_width: 0.5, sep_norm })
    }

    /// Centered box `[-half_width, half_width]^d`.
    pub fn cube(d: usize, half_width: f64, sep_norm: SepNorm) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParameter("domain dimension must be >= 1".into()));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "box half_width must be positive and finite, got {half_width}"
            )));
        }
        Ok(Domain { kind: DomainKind::Box, d, half_width, sep_norm })
    }

    pub fn kind(&self) -> DomainKind {
        self.kind
    }

    pub fn is_torus(&self) -> bool {
        self.kind == DomainKind::Torus
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn sep_norm(&self) -> SepNorm {
        self.sep_norm
    }

    pub fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: x.len() });
        }
        Ok(())
    }

    /// Whether `x` lies in the domain. Every real vector is on the torus.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.d
            && (self.is_torus() || x.iter().all(|&c| c.abs() <= self.half_width + 1e-12))
    }

    /// Coordinate-wise displacement `y - x`, wrapped to `[-1/2, 1/2)` on the
    /// torus.
    pub fn displacement(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.d);
        debug_assert_eq!(y.len(), self.d);
        x.iter()
            .zip(y)
            .map(|(&a, &b)| {
                let mut t = b - a;
                if self.is_torus() {
                    t -= t.round();
                    // round() maps exactly +0.5 to +-1; normalize to [-0.5, 0.5).
                    if t >= 0.5 {
                        t -= 1.0;
                    } else if t < -0.5 {
                        t += 1.0;
                    }
                }
                t
            })
            .collect()
    }

    /// Distance in the domain's separation norm.
    pub fn dist(&self, x: &[f64], y: &[f64]) -> f64 {
        let t = self.displacement(x, y);
        match self.sep_norm {
            SepNorm::Inf => t.iter().fold(0.0f64, |m, &c| m.max(c.abs())),
            SepNorm::L2 => t.iter().map(|&c| c * c).sum::<f64>().sqrt(),
        }
    }

    /// Euclidean distance (wrapped on the torus), independent of `sep_norm`.
    pub fn dist_l2(&self, x: &[f64], y: &[f64]) -> f64 {
        self.displacement(x, y).iter().map(|&c| c * c).sum::<f64>().sqrt()
    }

    /// Largest separation-norm distance realizable between two points.
    pub fn diameter(&self) -> f64 {
        let per_coord = match self.kind {
            DomainKind::Torus => 0.5,
            DomainKind::Box => 2.0 * self.half_width,
        };
        match self.sep_norm {
            SepNorm::Inf => per_coord,
            SepNorm::L2 => per_coord * (self.d as f64).sqrt(),
        }
    }

    /// Canonical representative of a torus point in `[0, 1)`; identity on the
    /// box (after clamping to the box).
    pub fn canonicalize(&self, x: &[f64]) -> Vec<f64> {
        match self.kind {
            DomainKind::Torus => x.iter().map(|&c| c - c.floor()).collect(),
            DomainKind::Box => {
                x.iter().map(|&c| c.clamp(-self.half_width, self.half_width)).collect()
            }
        }
    }

    /// Minimum pairwise separation of a point set, in the separation norm.
    ///
    /// Returns the domain diameter for fewer than two points.
    pub fn min_separation(&self, points: &[Vec<f64>]) -> f64 {
        let mut best = self.diameter();
        for (i, p) in points.iter().enumerate() {
            for q in points.iter().skip(i + 1) {
                best = best.min(self.dist(p, q));
            }
        }
        best
    }

    /// Near/far partition with balls of `radius` around `centers`.
    pub fn partition(&self, centers: &[Vec<f64>], radius: f64) -> Result<RegionPartition> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "partition radius must be positive, got {radius}"
            )));
        }
        for c in centers {
            self.check_dim(c)?;
        }
        Ok(RegionPartition { domain: self.clone(), centers: centers.to_vec(), radius })
    }

    /// Axis-aligned lattice covering `region` with Euclidean covering radius
    /// at most `spacing`.
    ///
    /// The per-coordinate pitch is `spacing / sqrt(d)`, shrunk so the lattice
    /// fits the region exactly; hence any point of the region is within
    /// `spacing` (Euclidean) of a grid point. Fails with
    /// [`Error::GridTooLarge`] beyond [`GRID_POINT_CAP`] points.
    pub fn covering_grid(&self, region: GridRegion<'_>, spacing: f64) -> Result<CoveringGrid> {
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "grid spacing must be positive, got {spacing}"
            )));
        }
        let pitch = spacing / (self.d as f64).sqrt();
        match region {
            GridRegion::Full => self.full_lattice(pitch, spacing),
            GridRegion::NearBall { center, radius } => {
                self.check_dim(center)?;
                self.ball_lattice(center, radius, pitch, spacing)
            }
            GridRegion::Far { centers, radius } => {
                let full = self.full_lattice(pitch, spacing)?;
                let keep: Vec<Vec<f64>> = full
                    .points
                    .into_iter()
                    .filter(|p| {
                        centers.iter().all(|c| self.dist(c, p) >= radius - 1e-12)
                    })
                    .collect();
                Ok(CoveringGrid { points: keep, spacing })
            }
        }
    }

    fn axis_counts_fail(&self, n_per_axis: &[u64]) -> Option<u128> {
        let total: u128 = n_per_axis.iter().map(|&n| n as u128).product();
        (total > GRID_POINT_CAP as u128).then_some(total)
    }

    fn full_lattice(&self, pitch: f64, spacing: f64) -> Result<CoveringGrid> {
        let (counts, coords): (Vec<u64>, Vec<Vec<f64>>) = match self.kind {
            DomainKind::Torus => {
                let n = (1.0 / pitch).ceil().max(1.0) as u64;
                let step = 1.0 / n as f64;
                let axis: Vec<f64> = (0..n).map(|j| j as f64 * step).collect();
                (vec![n; self.d], vec![axis; self.d])
            }
            DomainKind::Box => {
                let w = 2.0 * self.half_width;
                let cells = (w / pitch).ceil().max(1.0) as u64;
                let step = w / cells as f64;
                let axis: Vec<f64> =
                    (0..=cells).map(|j| -self.half_width + j as f64 * step).collect();
                (vec![cells + 1; self.d], vec![axis; self.d])
            }
        };
        if let Some(total) = self.axis_counts_fail(&counts) {
            return Err(Error::GridTooLarge { required: total, cap: GRID_POINT_CAP });
        }
        Ok(CoveringGrid { points: cartesian(&coords), spacing })
    }

    fn ball_lattice(
        &self,
        center: &[f64],
        radius: f64,
        pitch: f64,
        spacing: f64,
    ) -> Result<CoveringGrid> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "ball radius must be positive, got {radius}"
            )));
        }
        let half_steps = (radius / pitch).ceil().max(1.0) as u64;
        let step = radius / half_steps as f64;
        let n = 2 * half_steps + 1;
        if let Some(total) = self.axis_counts_fail(&vec![n; self.d]) {
            return Err(Error::GridTooLarge { required: total, cap: GRID_POINT_CAP });
        }
        let axis: Vec<f64> = (0..n)
            .map(|j| (j as i64 - half_steps as i64) as f64 * step)
            .collect();
        let offsets = cartesian(&vec![axis; self.d]);
        let points: Vec<Vec<f64>> = offsets
            .into_iter()
            .filter(|off| {
                let r = match self.sep_norm {
                    SepNorm::Inf => off.iter().fold(0.0f64, |m, &c| m.max(c.abs())),
                    SepNorm::L2 => off.iter().map(|&c| c * c).sum::<f64>().sqrt(),
                };
                r <= radius + 1e-12
            })
            .map(|off| {
                let raw: Vec<f64> = center.iter().zip(&off).map(|(&c, &o)| c + o).collect();
                // Clamping onto the box is a metric projection, so covering
                // radii of ball-and-box intersections only shrink.
                self.canonicalize(&raw)
            })
            .collect();
        Ok(CoveringGrid { points, spacing })
    }
}

/// Region selector for [`Domain::covering_grid`].
#[derive(Clone, Copy, Debug)]
pub enum GridRegion<'a> {
    /// The whole domain.
    Full,
    /// Separation-norm ball around one center.
    NearBall { center: &'a [f64], radius: f64 },
    /// Whole domain minus the open balls around `centers`.
    Far { centers: &'a [Vec<f64>], radius: f64 },
}

/// A finite lattice with a certified Euclidean covering radius.
#[derive(Clone, Debug)]
pub struct CoveringGrid {
    pub points: Vec<Vec<f64>>,
    /// Upper bound on the Euclidean distance from any covered point to the
    /// grid.
    pub spacing: f64,
}

fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = vec![vec![]];
    for axis in axes {
        let mut next = Vec::with_capacity(out.len() * axis.len());
        for partial in &out {
            for &v in axis {
                let mut p = partial.clone();
                p.push(v);
                next.push(p);
            }
        }
        out = next;
    }
    out
}

// ---------------------------------------------------------------------------
// Region partition
// ---------------------------------------------------------------------------

/// Classification of a query point by [`RegionPartition::classify`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Region {
    /// Inside the ball of the given center index (nearest center wins, ties
    /// broken toward the lowest index).
    Near(usize),
    Far,
}

/// Near-ball/far partition of the domain around a set of centers.
#[derive(Clone, Debug)]
pub struct RegionPartition {
    domain: Domain,
    centers: Vec<Vec<f64>>,
    radius: f64,
}

impl RegionPartition {
    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn classify(&self, x: &[f64]) -> Region {
        let mut best: Option<(usize, f64)> = None;
        for (i, c) in self.centers.iter().enumerate() {
            let d = self.domain.dist(c, x);
            if d <= self.radius {
                match best {
                    Some((_, bd)) if bd <= d => {}
                    _ => best = Some((i, d)),
                }
            }
        }
        match best {
            Some((i, _)) => Region::Near(i),
            None => Region::Far,
        }
    }
}

// ---------------------------------------------------------------------------
// Discrete measures
// ---------------------------------------------------------------------------

/// A weighted Dirac: position `x`, signed amplitude `a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub x: Vec<f64>,
    pub a: f64,
}

/// A finite signed sum of Diracs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    pub atoms: Vec<Atom>,
}

impl DiscreteMeasure {
    pub fn new(atoms: Vec<Atom>) -> Self {
        DiscreteMeasure { atoms }
    }

    pub fn from_parts(positions: &[Vec<f64>], amplitudes: &[f64]) -> Result<Self> {
        if positions.len() != amplitudes.len() {
            return Err(Error::DimensionMismatch {
                expected: positions.len(),
                got: amplitudes.len(),
            });
        }
        Ok(DiscreteMeasure {
            atoms: positions
                .iter()
                .zip(amplitudes)
                .map(|(x, &a)| Atom { x: x.clone(), a })
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Total variation: the sum of absolute amplitudes.
    pub fn tv_norm(&self) -> f64 {
        self.atoms.iter().map(|a| a.a.abs()).sum()
    }

    pub fn positions(&self) -> Vec<Vec<f64>> {
        self.atoms.iter().map(|a| a.x.clone()).collect()
    }

    pub fn amplitudes(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.a).collect()
    }

    /// Signs of the amplitudes (`0.0` for exact zeros).
    pub fn signs(&self) -> Vec<f64> {
        self.atoms
            .iter()
            .map(|a| if a.a == 0.0 { 0.0 } else { a.a.signum() })
            .collect()
    }

    pub fn check_dim(&self, d: usize) -> Result<()> {
        for atom in &self.atoms {
            if atom.x.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: atom.x.len() });
            }
        }
        Ok(())
    }
}
