//! Uniform voxel partition of the point space and per-voxel plane fits.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::cloud_io::PointCloud;
use crate::error::{Error, Result};
use crate::geometry::{canonical_sign, symmetric_eigen, Aabb, Point3, UnitVector3};
use crate::par;

pub const DEFAULT_ZETA: f64 = 0.04;
pub const DEFAULT_MIN_POINTS: usize = 3;

/// Relative margin added around the tight bounds so boundary points land inside.
const BOUNDS_MARGIN: f64 = 1e-9;

pub type VoxelIndex = [usize; 3];

/// Largest grid for which points are grouped with a dense counting pass.
const DENSE_GROUPING_LIMIT: usize = 1 << 22;

#[derive(Debug, Clone)]
pub struct VoxelGrid {
    pub bounds: Aabb,
    pub zeta: f64,
    pub edge_length: f64,
    pub dims: [usize; 3],
    /// Point indices per occupied voxel, keyed in lexicographic voxel order.
    pub occupancy: BTreeMap<VoxelIndex, Vec<usize>>,
}

impl VoxelGrid {
    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn occupied(&self) -> usize {
        self.occupancy.len()
    }

    /// The voxel containing `p`, clamped into the grid.
    pub fn voxel_of(&self, p: &Point3) -> VoxelIndex {
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let f = ((p[a] - self.bounds.min[a]) / self.edge_length).floor();
            idx[a] = if f <= 0.0 {
                0
            } else {
                (f as usize).min(self.dims[a] - 1)
            };
        }
        idx
    }
}

/// Builds a grid whose voxel edge is `zeta` times the longest extent of the cloud.
pub fn build_grid(cloud: &PointCloud, zeta: f64) -> Result<VoxelGrid> {
    if !(zeta > 0.0 && zeta <= 1.0) {
        return Err(Error::invalid(format!(
            "zeta must be in (0, 1], got {zeta}"
        )));
    }
    let tight = Aabb::from_points(&cloud.points).ok_or(Error::EmptyCloud)?;
    let margin = BOUNDS_MARGIN * tight.longest_extent().max(1.0);
    let bounds = tight.expanded(margin);
    let extent = bounds.extent();
    let edge_length = zeta * extent.max();

    let mut dims = [1usize; 3];
    for a in 0..3 {
        // Shave a hair off so exact multiples do not round up to an extra layer.
        let cells = (extent[a] / edge_length * (1.0 - 1e-12)).ceil();
        dims[a] = (cells as usize).max(1);
    }

    let mut grid = VoxelGrid {
        bounds,
        zeta,
        edge_length,
        dims,
        occupancy: BTreeMap::new(),
    };
    let keys = par::map(&cloud.points, |p| grid.voxel_of(p));
    grid.occupancy = group_by_voxel(&keys, dims);
    Ok(grid)
}

fn group_by_sorting(keys: &[VoxelIndex]) -> BTreeMap<VoxelIndex, Vec<usize>> {
    let mut keyed: Vec<(VoxelIndex, usize)> = keys.iter().copied().zip(0..).collect();
    keyed.sort_unstable();
    keyed
        .chunk_by(|a, b| a.0 == b.0)
        .map(|run| (run[0].0, run.iter().map(|&(_, i)| i).collect()))
        .collect()
}

/// Groups point indices by voxel key, preserving ascending point order within
/// each voxel.
fn group_by_voxel(keys: &[VoxelIndex], dims: [usize; 3]) -> BTreeMap<VoxelIndex, Vec<usize>> {
    let cells = dims[0]
        .checked_mul(dims[1])
        .and_then(|c| c.checked_mul(dims[2]))
        .filter(|&c| c <= DENSE_GROUPING_LIMIT.max(4 * keys.len()));
    let Some(cells) = cells else {
        return group_by_sorting(keys);
    };

    // Counting sort on the lexicographic linear index.
    let linear = |k: &VoxelIndex| (k[0] * dims[1] + k[1]) * dims[2] + k[2];
    let mut counts = vec![0u32; cells];
    for k in keys {
        counts[linear(k)] += 1;
    }
    let mut buckets: Vec<(usize, Vec<usize>)> = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(cell, &c)| (cell, Vec::with_capacity(c as usize)))
        .collect();
    let mut slot = vec![u32::MAX; cells];
    for (b, (cell, _)) in buckets.iter().enumerate() {
        slot[*cell] = b as u32;
    }
    for (i, k) in keys.iter().enumerate() {
        buckets[slot[linear(k)] as usize].1.push(i);
    }
    buckets
        .into_iter()
        .map(|(cell, idx)| {
            let key = [
                cell / (dims[1] * dims[2]),
                (cell / dims[2]) % dims[1],
                cell % dims[2],
            ];
            (key, idx)
        })
        .collect()
}

/// A best-fit plane for one voxel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelPlane {
    pub voxel_index: VoxelIndex,
    pub centroid: Point3,
    pub normal: UnitVector3,
    /// Smallest scatter eigenvalue divided by the point count.
    pub residual: f64,
    pub point_count: usize,
}

/// Plane fit of a bare point set, before it is attached to a voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneFit {
    pub centroid: Point3,
    pub normal: UnitVector3,
    pub residual: f64,
    pub point_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unfittable {
    TooFewPoints,
    Collinear,
}

/// Total-least-squares plane through `points`.
pub fn fit_voxel_plane(points: &[Point3]) -> std::result::Result<PlaneFit, Unfittable> {
    let n = points.len();
    if n < 3 {
        return Err(Unfittable::TooFewPoints);
    }
    let centroid = points.iter().fold(Vector3::zeros(), |a, p| a + p) / n as f64;
    let scatter = points.iter().fold(Matrix3::zeros(), |acc, p| {
        let d = p - centroid;
        acc + d * d.transpose()
    });
    let (vals, vecs) = symmetric_eigen(&scatter).map_err(|_| Unfittable::Collinear)?;
    // Second eigenvalue ~0 means the points span at most a line.
    if !(vals[1] > 1e-12 * vals[2]) || vals[2] <= 0.0 {
        return Err(Unfittable::Collinear);
    }
    let normal = UnitVector3::new_normalize(canonical_sign(vecs.column(0).into_owned()));
    Ok(PlaneFit {
        centroid,
        normal,
        residual: vals[0].max(0.0) / n as f64,
        point_count: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VoxelDiagnostics {
    pub occupied: usize,
    pub fitted: usize,
    pub skipped_too_few: usize,
    pub skipped_collinear: usize,
}

#[derive(Debug, Clone)]
pub struct VoxelFitOutcome {
    pub planes: Vec<VoxelPlane>,
    pub diagnostics: VoxelDiagnostics,
}

/// Fits one plane per occupied voxel holding at least `min_points` points.
/// Output follows lexicographic voxel order.
pub fn fit_all(grid: &VoxelGrid, cloud: &PointCloud, min_points: usize) -> VoxelFitOutcome {
    let cells: Vec<(&VoxelIndex, &Vec<usize>)> = grid.occupancy.iter().collect();
    let fits = par::map(&cells, |(key, idx)| {
        if idx.len() < min_points.max(3) {
            return Err(Unfittable::TooFewPoints);
        }
        let pts: Vec<Point3> = idx.iter().map(|&i| cloud.points[i]).collect();
        fit_voxel_plane(&pts).map(|f| VoxelPlane {
            voxel_index: **key,
            centroid: f.centroid,
            normal: f.normal,
            residual: f.residual,
            point_count: f.point_count,
        })
    });

    let mut diagnostics = VoxelDiagnostics {
        occupied: cells.len(),
        ..Default::default()
    };
    let mut planes = Vec::with_capacity(fits.len());
    for fit in fits {
        match fit {
            Ok(p) => planes.push(p),
            Err(Unfittable::TooFewPoints) => diagnostics.skipped_too_few += 1,
            Err(Unfittable::Collinear) => diagnostics.skipped_collinear += 1,
        }
    }
    diagnostics.fitted = planes.len();
    VoxelFitOutcome {
        planes,
        diagnostics,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{acute_angle_deg, rodrigues_rotation};
    use nalgebra::Unit;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn dense_and_sorted_grouping_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dims = [7, 3, 5];
        let keys: Vec<VoxelIndex> = (0..2000)
            .map(|_| {
                [
                    rng.random_range(0..7),
                    rng.random_range(0..3),
                    rng.random_range(0..5),
                ]
            })
            .collect();
        let dense = group_by_voxel(&keys, dims);
        assert_eq!(dense, group_by_sorting(&keys));
        assert_eq!(dense.values().map(Vec::len).sum::<usize>(), 2000);
        assert!(dense.values().all(|v| v.windows(2).all(|w| w[0] < w[1])));
    }

    fn uniform_cube(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| Vector3::new(rng.random(), rng.random(), rng.random()))
                .collect(),
        )
    }

    fn sum_sq_dist(points: &[Point3], c: &Point3, n: &Vector3<f64>) -> f64 {
        points.iter().map(|p| (p - c).dot(n).powi(2)).sum()
    }

    /// Points on the surface of the unit cube (6 faces).
    fn cube_surface(per_face: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::new();
        for axis in 0..3 {
            for side in [0.0, 1.0] {
                for _ in 0..per_face {
                    let mut p = Vector3::new(rng.random(), rng.random(), rng.random());
                    p[axis] = side;
                    pts.push(p);
                }
            }
        }
        PointCloud::new(pts)
    }

    #[test]
    fn unit_cube_half_zeta_gives_two_per_axis() {
        let mut cloud = uniform_cube(1000, 1);
        cloud.points.push(Vector3::zeros());
        cloud.points.push(Vector3::repeat(1.0));
        let g = build_grid(&cloud, 0.5).unwrap();
        assert_eq!(g.dims, [2, 2, 2]);
    }

    #[test]
    fn zeta_one_is_single_voxel() {
        let cloud = uniform_cube(500, 2);
        let g = build_grid(&cloud, 1.0).unwrap();
        assert_eq!(g.dims, [1, 1, 1]);
        assert_eq!(g.occupied(), 1);
        assert_eq!(g.occupancy.values().next().unwrap().len(), 500);
    }

    #[test]
    fn zeta_out_of_range() {
        let cloud = uniform_cube(10, 3);
        for z in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(
                build_grid(&cloud, z),
                Err(Error::InvalidArgument(_))
            ));
        }
        assert!(matches!(
            build_grid(&PointCloud::default(), 0.1),
            Err(Error::EmptyCloud)
        ));
    }

    #[test]
    fn halving_zeta_gives_cubic_growth() {
        // Dense enough that every voxel is occupied at both resolutions.
        let cloud = uniform_cube(200_000, 4);
        let coarse = build_grid(&cloud, 0.2).unwrap().occupied();
        let fine = build_grid(&cloud, 0.1).unwrap().occupied();
        let ratio = fine as f64 / coarse as f64;
        assert!((ratio - 8.0).abs() < 0.5, "ratio {ratio}");
    }

    #[test]
    fn partition_covers_every_point_once() {
        let cloud = uniform_cube(5000, 5);
        let g = build_grid(&cloud, 0.13).unwrap();
        let mut seen = vec![0u8; cloud.len()];
        for idx in g.occupancy.values() {
            for &i in idx {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
        for (key, idx) in &g.occupancy {
            for &i in idx {
                assert_eq!(g.voxel_of(&cloud.points[i]), *key);
            }
        }
    }

    #[test]
    fn exact_horizontal_plane() {
        let pts: Vec<Point3> = (0..50)
            .map(|i| Vector3::new((i % 7) as f64, (i / 7) as f64 * 0.5, 5.0))
            .collect();
        let f = fit_voxel_plane(&pts).unwrap();
        assert!((f.normal.into_inner() - Vector3::z()).norm() < 1e-12);
        assert!(f.residual <= 1e-12);
    }

    #[test]
    fn exact_oblique_plane() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pts: Vec<Point3> = (0..100)
            .map(|_| {
                let (x, y): (f64, f64) = (rng.random(), rng.random());
                Vector3::new(x, y, 1.0 - x - y)
            })
            .collect();
        let f = fit_voxel_plane(&pts).unwrap();
        let expected = Vector3::repeat(1.0).normalize();
        assert!((f.normal.into_inner() - expected).norm() < 1e-9);
        assert!(f.residual <= 1e-12);
    }

    #[test]
    fn noisy_plane_within_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sigma = 0.01;
        let noise = Normal::new(0.0, sigma).unwrap();
        let pts: Vec<Point3> = (0..500)
            .map(|_| Vector3::new(rng.random(), rng.random(), noise.sample(&mut rng)))
            .collect();
        let f = fit_voxel_plane(&pts).unwrap();
        assert!(acute_angle_deg(&f.normal, &Vector3::z()) < 0.5);
        let rel = (f.residual - sigma * sigma).abs() / (sigma * sigma);
        assert!(rel < 0.2, "residual {} rel err {rel}", f.residual);
    }

    #[test]
    fn degenerate_inputs_are_unfittable() {
        let two = [Vector3::zeros(), Vector3::x()];
        assert_eq!(fit_voxel_plane(&two), Err(Unfittable::TooFewPoints));
        let line: Vec<Point3> = (0..5)
            .map(|i| Vector3::new(i as f64, i as f64, 0.0))
            .collect();
        assert_eq!(fit_voxel_plane(&line), Err(Unfittable::Collinear));
        let same = [Vector3::x(); 4];
        assert_eq!(fit_voxel_plane(&same), Err(Unfittable::Collinear));
    }

    #[test]
    fn single_voxel_cloud_gives_one_plane() {
        let cloud = PointCloud::new(
            (0..30)
                .map(|i| Vector3::new((i % 5) as f64, (i / 5) as f64, 0.1 * (i % 3) as f64))
                .collect(),
        );
        let g = build_grid(&cloud, 1.0).unwrap();
        let out = fit_all(&g, &cloud, 3);
        assert_eq!(out.planes.len(), 1);
        assert_eq!(out.diagnostics.occupied, 1);
    }

    #[test]
    fn parallel_patches_share_normal() {
        let mut pts = Vec::new();
        let n = Vector3::new(0.2, -0.3, 1.0).normalize();
        let u = n.cross(&Vector3::x()).normalize();
        let v = n.cross(&u);
        for offset in [Vector3::zeros(), Vector3::new(10.0, 0.0, 0.0)] {
            for i in 0..10 {
                for j in 0..10 {
                    pts.push(offset + u * (i as f64 * 0.1) + v * (j as f64 * 0.1));
                }
            }
        }
        // The second patch is a pure translation of the first.
        let cloud = PointCloud::new(pts);
        let g = build_grid(&cloud, 0.5).unwrap();
        let out = fit_all(&g, &cloud, 3);
        assert_eq!(out.planes.len(), 2);
        let (a, b) = (&out.planes[0].normal, &out.planes[1].normal);
        assert!((a.into_inner() - b.into_inner()).norm() < 1e-9);
    }

    #[test]
    fn cube_surface_normals_align_with_axes() {
        let cloud = cube_surface(20_000, 8);
        let g = build_grid(&cloud, 0.05).unwrap();
        let out = fit_all(&g, &cloud, 3);
        assert!(out.planes.len() > 100);
        // Voxels straddling an edge of the cube mix two faces; only single-face
        // voxels are held to the 3 degree tolerance.
        let mut checked = 0;
        for plane in &out.planes {
            let idx = &g.occupancy[&plane.voxel_index];
            let faces: std::collections::BTreeSet<(usize, bool)> = idx
                .iter()
                .flat_map(|&i| {
                    let p = cloud.points[i];
                    (0..3).filter_map(move |a| {
                        if p[a] == 0.0 {
                            Some((a, false))
                        } else if p[a] == 1.0 {
                            Some((a, true))
                        } else {
                            None
                        }
                    })
                })
                .collect();
            if faces.len() != 1 {
                continue;
            }
            let best = [Vector3::x(), Vector3::y(), Vector3::z()]
                .iter()
                .map(|a| acute_angle_deg(&plane.normal, a))
                .fold(f64::INFINITY, f64::min);
            assert!(best <= 3.0, "normal {:?} off by {best}", plane.normal);
            checked += 1;
        }
        assert!(checked > 100);
    }

    #[test]
    fn point_counts_partition_cloud() {
        let cloud = cube_surface(2_000, 9);
        let g = build_grid(&cloud, 0.07).unwrap();
        let out = fit_all(&g, &cloud, 5);
        let total: usize = g.occupancy.values().map(Vec::len).sum();
        assert_eq!(total, cloud.len());
        let d = out.diagnostics;
        assert_eq!(
            d.fitted + d.skipped_too_few + d.skipped_collinear,
            d.occupied
        );
        assert!(out
            .planes
            .windows(2)
            .all(|w| w[0].voxel_index < w[1].voxel_index));
        assert!(out.planes.iter().all(|p| p.point_count >= 5));
    }

    #[test]
    fn fitted_normal_is_locally_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let noise = Normal::new(0.0, 0.02).unwrap();
        let pts: Vec<Point3> = (0..200)
            .map(|_| {
                let (x, y): (f64, f64) = (rng.random(), rng.random());
                Vector3::new(x, y, 0.3 * x - 0.2 * y + noise.sample(&mut rng))
            })
            .collect();
        let f = fit_voxel_plane(&pts).unwrap();
        let n = f.normal.into_inner();
        let base = sum_sq_dist(&pts, &f.centroid, &n);
        for _ in 0..16 {
            let r = Vector3::new(rng.random(), rng.random(), rng.random()) - Vector3::repeat(0.5);
            let axis = Unit::new_normalize(n.cross(&r));
            let rot = rodrigues_rotation(&axis, 1f64.to_radians()).unwrap();
            let perturbed = rot.apply(&n);
            assert!(sum_sq_dist(&pts, &f.centroid, &perturbed) >= base);
        }
    }

    #[test]
    fn rotating_cloud_rotates_normals() {
        let cloud = cube_surface(3_000, 11);
        let axis = Unit::new_normalize(Vector3::new(0.3, 0.5, 0.8));
        let rot = rodrigues_rotation(&axis, 0.6).unwrap();
        let rotated = cloud.map_points(|p| rot.apply(p));
        let g = build_grid(&rotated, 0.1).unwrap();
        let out = fit_all(&g, &rotated, 3);
        for plane in &out.planes {
            // Refit the same points in the original frame and rotate that normal.
            let idx = &g.occupancy[&plane.voxel_index];
            let orig: Vec<Point3> = idx.iter().map(|&i| cloud.points[i]).collect();
            let f = fit_voxel_plane(&orig).unwrap();
            let mapped = rot.apply(&f.normal);
            let n = plane.normal.into_inner();
            assert!((mapped - n).norm().min((mapped + n).norm()) < 1e-6);
        }
    }
}
