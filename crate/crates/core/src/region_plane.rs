//! Region planes: a bounded rectangle summarizing one grown region.
//!
//! Member voxel planes define an unbounded "ideal" plane (weighted centroid
//! plus orientation-tensor normal). Region points are projected into the
//! plane's (u, v) frame and the in-plane rotation that minimizes the
//! perimeter of their axis-aligned bounding rectangle is found by a
//! golden-section search. The rectangle at that rotation is the region plane.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Matrix3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::cloud_io::PointCloud;
use crate::error::{Error, Result};
use crate::geometry::{
    canonical_sign, largest_eigenvector, rodrigues_rotation, Point3, UnitVector3,
};
use crate::segmentation::Region;
use crate::voxel_fit::{fit_voxel_plane, VoxelGrid, VoxelPlane};

/// Number of uniform samples of the coarse scan over one period.
pub const COARSE_SAMPLES: usize = 16;
/// Golden-section stops once the bracket is narrower than this (radians).
pub const GOLDEN_TOLERANCE: f64 = 1e-10;

const INV_PHI: f64 = 0.618_033_988_749_894_8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdealPlane {
    pub origin: Point3,
    pub normal: UnitVector3,
    pub u_axis: UnitVector3,
    pub v_axis: UnitVector3,
}

impl IdealPlane {
    /// Builds the frame for `origin`/`normal`, choosing `u` from the world
    /// axis least aligned with the normal.
    pub fn from_normal(origin: Point3, normal: UnitVector3) -> Self {
        let n = normal.into_inner();
        let axes = [Vector3::x(), Vector3::y(), Vector3::z()];
        let mut best = 0;
        for a in 1..3 {
            if n.dot(&axes[a]).abs() < n.dot(&axes[best]).abs() {
                best = a;
            }
        }
        let w = axes[best];
        let u = Unit::new_normalize(w - n * n.dot(&w));
        let v = Unit::new_normalize(n.cross(&u));
        Self {
            origin,
            normal,
            u_axis: u,
            v_axis: v,
        }
    }

    pub fn reconstruct(&self, c: &RegionFrameCoords) -> Point3 {
        self.origin
            + self.u_axis.into_inner() * c.beta
            + self.v_axis.into_inner() * c.gamma
            + self.normal.into_inner() * c.offset
    }
}

/// Coordinates of one point in an ideal plane's (u, v, n) frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionFrameCoords {
    pub beta: f64,
    pub gamma: f64,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionPlane {
    pub region_id: usize,
    pub center: Point3,
    pub normal: UnitVector3,
    pub axes: (UnitVector3, UnitVector3),
    pub half_extents: (f64, f64),
    pub phi_star: f64,
    pub perimeter: f64,
}

impl RegionPlane {
    /// Rectangle corners, counter-clockwise about the normal.
    pub fn corners(&self) -> [Point3; 4] {
        let a = self.axes.0.into_inner() * self.half_extents.0;
        let b = self.axes.1.into_inner() * self.half_extents.1;
        [
            self.center - a - b,
            self.center + a - b,
            self.center + a + b,
            self.center - a + b,
        ]
    }
}

/// Aggregates member planes into an ideal plane.
///
/// The origin is the point-count-weighted mean of member centroids. The
/// normal is the dominant eigenvector of the orientation tensor
/// `sum w_i n_i n_i^T` (weights are point counts, or 1 when `weighted` is
/// false), which makes the result independent of normal signs. If the tensor
/// has no dominant direction the plane is refitted to the member centroids.
pub fn ideal_plane(region: &Region, planes: &[VoxelPlane], weighted: bool) -> Result<IdealPlane> {
    if region.members.is_empty() {
        return Err(Error::invalid("region has no members"));
    }
    let mut origin = Vector3::zeros();
    let mut total = 0.0;
    let mut tensor = Matrix3::zeros();
    for &m in &region.members {
        let p = planes
            .get(m)
            .ok_or_else(|| Error::invalid(format!("member {m} out of range")))?;
        let w = p.point_count as f64;
        origin += p.centroid * w;
        total += w;
        let tw = if weighted { w } else { 1.0 };
        let n = p.normal.into_inner();
        tensor += n * n.transpose() * tw;
    }
    origin /= total;

    let (vals, _) = crate::geometry::symmetric_eigen(&tensor)?;
    let separated = vals[2] - vals[1] > 1e-9 * vals[2];
    let normal = if separated {
        largest_eigenvector(&tensor)?.1
    } else {
        let centroids: Vec<Point3> = region.members.iter().map(|&m| planes[m].centroid).collect();
        fit_voxel_plane(&centroids)
            .map_err(|_| {
                Error::degenerate(format!(
                    "region {}: normals have no dominant direction and centroids do not span a plane",
                    region.id
                ))
            })?
            .normal
    };
    let normal = Unit::new_normalize(canonical_sign(normal.into_inner()));
    Ok(IdealPlane::from_normal(origin, normal))
}

pub fn project_to_region_space(plane: &IdealPlane, points: &[Point3]) -> Vec<RegionFrameCoords> {
    let (u, v, n) = (plane.u_axis, plane.v_axis, plane.normal);
    points
        .iter()
        .map(|p| {
            let d = p - plane.origin;
            RegionFrameCoords {
                beta: d.dot(&u),
                gamma: d.dot(&v),
                offset: d.dot(&n),
            }
        })
        .collect()
}

/// Bounding rectangle of `coords` rotated in-plane by `phi`:
/// `(min_beta, max_beta, min_gamma, max_gamma)` in the rotated frame.
fn rotated_bounds(coords: &[(f64, f64)], phi: f64) -> (f64, f64, f64, f64) {
    let (s, c) = phi.sin_cos();
    let mut b = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for &(beta, gamma) in coords {
        let x = beta * c - gamma * s;
        let y = beta * s + gamma * c;
        b.0 = b.0.min(x);
        b.1 = b.1.max(x);
        b.2 = b.2.min(y);
        b.3 = b.3.max(y);
    }
    b
}

/// Perimeter of the axis-aligned rectangle around `coords` rotated by `phi`.
pub fn perimeter_at(coords: &[(f64, f64)], phi: f64) -> f64 {
    let (x0, x1, y0, y1) = rotated_bounds(coords, phi);
    2.0 * ((x1 - x0) + (y1 - y0))
}

fn cross2(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Convex hull vertices (monotone chain), counter-clockwise, collinear points dropped.
pub fn convex_hull(coords: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let octagon = extreme_octagon(coords);
    if octagon.len() < 3 {
        return monotone_chain(coords.to_vec());
    }
    let inside = |p: (f64, f64)| {
        (0..octagon.len()).all(|i| cross2(octagon[i], octagon[(i + 1) % octagon.len()], p) > 0.0)
    };
    monotone_chain(coords.iter().copied().filter(|&p| !inside(p)).collect())
}

/// Extreme points along eight compass directions, counter-clockwise, without
/// repeats. Every point strictly inside cannot be a hull vertex.
fn extreme_octagon(coords: &[(f64, f64)]) -> Vec<(f64, f64)> {
    const DIRS: [(f64, f64); 8] = [
        (1.0, 0.0),
        (1.0, 1.0),
        (0.0, 1.0),
        (-1.0, 1.0),
        (-1.0, 0.0),
        (-1.0, -1.0),
        (0.0, -1.0),
        (1.0, -1.0),
    ];
    let Some(&first) = coords.first() else {
        return Vec::new();
    };
    let mut best = [(first, f64::NEG_INFINITY); 8];
    for &p in coords {
        for (slot, (dx, dy)) in best.iter_mut().zip(DIRS) {
            let score = p.0 * dx + p.1 * dy;
            if score > slot.1 {
                *slot = (p, score);
            }
        }
    }
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(8);
    for (p, _) in best {
        if out.last() != Some(&p) && out.first() != Some(&p) {
            out.push(p);
        }
    }
    out
}

fn monotone_chain(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2
                && cross2(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
            {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerimeterMinimum {
    /// Minimizing rotation in [0, pi/2).
    pub phi_star: f64,
    pub half_extents: (f64, f64),
    /// Rectangle midpoint in the rotated frame.
    pub center: (f64, f64),
    pub perimeter: f64,
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while b - a > tol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Finds the in-plane rotation minimizing the bounding-rectangle perimeter.
///
/// The perimeter has period pi/2 in `phi`. Between the angles at which a hull
/// edge turns axis-aligned it is concave, so every local minimum sits on one
/// of those angles. The coarse scan evaluates [`COARSE_SAMPLES`] uniform
/// angles plus every such alignment angle, and a golden-section search then
/// refines the two intervals on either side of the best sample.
pub fn minimize_perimeter(coords: &[(f64, f64)]) -> Result<PerimeterMinimum> {
    let Some(&first) = coords.first() else {
        return Err(Error::degenerate("no points to bound"));
    };
    let spread = coords
        .iter()
        .map(|&(b, g)| (b - first.0).abs().max((g - first.1).abs()))
        .fold(0.0, f64::max);
    let scale = coords
        .iter()
        .map(|&(b, g)| b.abs().max(g.abs()))
        .fold(0.0, f64::max);
    if !(spread > 1e-12 * scale.max(1e-300)) {
        return Err(Error::degenerate("all region points coincide"));
    }

    // The bounding rectangle only depends on the hull.
    let hull = convex_hull(coords);
    let f = |phi: f64| perimeter_at(&hull, phi);
    let period = FRAC_PI_2;
    let mut samples: Vec<f64> = (0..COARSE_SAMPLES)
        .map(|j| j as f64 * period / COARSE_SAMPLES as f64)
        .collect();
    for (i, &a) in hull.iter().enumerate() {
        let b = hull[(i + 1) % hull.len()];
        let aligned = (-(b.1 - a.1).atan2(b.0 - a.0)).rem_euclid(period);
        samples.push(if aligned >= period { 0.0 } else { aligned });
    }
    samples.sort_by(f64::total_cmp);
    samples.dedup();

    let values: Vec<f64> = samples.iter().map(|&phi| f(phi)).collect();
    let (mut best_idx, mut best) = (0, values[0]);
    for (i, &v) in values.iter().enumerate() {
        if v < best {
            best_idx = i;
            best = v;
        }
    }
    let n = samples.len();
    let mut best_phi = samples[best_idx];
    let prev = if best_idx == 0 {
        samples[n - 1] - period
    } else {
        samples[best_idx - 1]
    };
    let next = if best_idx + 1 == n {
        samples[0] + period
    } else {
        samples[best_idx + 1]
    };
    for (lo, hi) in [(prev, best_phi), (best_phi, next)] {
        let (phi, val) = golden_section(f, lo, hi, GOLDEN_TOLERANCE);
        if val < best {
            best = val;
            best_phi = phi;
        }
    }

    let phi_star = best_phi.rem_euclid(FRAC_PI_2);
    let (x0, x1, y0, y1) = rotated_bounds(&hull, phi_star);
    Ok(PerimeterMinimum {
        phi_star,
        half_extents: ((x1 - x0) / 2.0, (y1 - y0) / 2.0),
        center: ((x0 + x1) / 2.0, (y0 + y1) / 2.0),
        perimeter: 2.0 * ((x1 - x0) + (y1 - y0)),
    })
}

/// All cloud point indices that fall in the region's voxels, ascending.
pub fn region_point_indices(
    region: &Region,
    planes: &[VoxelPlane],
    grid: &VoxelGrid,
) -> Vec<usize> {
    let mut idx: Vec<usize> = region
        .members
        .iter()
        .filter_map(|&m| grid.occupancy.get(&planes[m].voxel_index))
        .flatten()
        .copied()
        .collect();
    idx.sort_unstable();
    idx
}

/// Rectangle for `points` about an already-built ideal plane.
pub fn bound_ideal_plane(
    region_id: usize,
    ideal: &IdealPlane,
    points: &[Point3],
) -> Result<RegionPlane> {
    let coords: Vec<(f64, f64)> = project_to_region_space(ideal, points)
        .into_iter()
        .map(|c| (c.beta, c.gamma))
        .collect();
    bound_coords(region_id, ideal, &coords)
}

fn bound_coords(
    region_id: usize,
    ideal: &IdealPlane,
    coords: &[(f64, f64)],
) -> Result<RegionPlane> {
    let min = minimize_perimeter(coords).map_err(|e| match e {
        Error::DegenerateGeometry(msg) => Error::degenerate(format!("region {region_id}: {msg}")),
        other => other,
    })?;
    // Rotating coordinates by +phi is rotating the axes by -phi about n.
    let rot = rodrigues_rotation(&ideal.normal, -min.phi_star)?;
    let u = rot.apply_unit(&ideal.u_axis);
    let v = rot.apply_unit(&ideal.v_axis);
    let center = ideal.origin + u.into_inner() * min.center.0 + v.into_inner() * min.center.1;
    Ok(RegionPlane {
        region_id,
        center,
        normal: ideal.normal,
        axes: (u, v),
        half_extents: min.half_extents,
        phi_star: min.phi_star,
        perimeter: min.perimeter,
    })
}

/// Ideal plane, projection of the region's points and minimum-perimeter bounding.
pub fn build_region_plane(
    region: &Region,
    planes: &[VoxelPlane],
    grid: &VoxelGrid,
    cloud: &PointCloud,
    weighted: bool,
) -> Result<RegionPlane> {
    let ideal = ideal_plane(region, planes, weighted)?;
    let (u, v) = (ideal.u_axis, ideal.v_axis);
    let coords: Vec<(f64, f64)> = region
        .members
        .iter()
        .filter_map(|&m| grid.occupancy.get(&planes[m].voxel_index))
        .flatten()
        .map(|&i| {
            let d = cloud.points[i] - ideal.origin;
            (d.dot(&u), d.dot(&v))
        })
        .collect();
    bound_coords(region.id, &ideal, &coords)
}
