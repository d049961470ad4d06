//! kNN region growing over voxel planes.
//!
//! Planes are visited in ascending residual order. Each unassigned plane
//! starts a region and becomes its first seed. A seed admits any of its k
//! nearest (by centroid) unassigned neighbours whose normal is within
//! `theta_deg` of the seed's normal; an admitted neighbour is promoted to a
//! seed itself only if its centroid lies within `psi` of the seed's plane.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{acute_angle_deg, Point3};
use crate::par;
use crate::voxel_fit::VoxelPlane;

pub const DEFAULT_THETA_DEG: f64 = 6.0;
pub const DEFAULT_PSI: f64 = 0.1;
pub const DEFAULT_K: usize = 7;
pub const DEFAULT_MIN_REGION_SIZE: usize = 10;

/// Slack on the angle test so identical normals pass at theta = 0.
const ANGLE_SLACK_DEG: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowParams {
    pub theta_deg: f64,
    pub psi: f64,
    pub k: usize,
    pub min_region_size: usize,
}

impl Default for GrowParams {
    fn default() -> Self {
        Self {
            theta_deg: DEFAULT_THETA_DEG,
            psi: DEFAULT_PSI,
            k: DEFAULT_K,
            min_region_size: DEFAULT_MIN_REGION_SIZE,
        }
    }
}

impl GrowParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=90.0).contains(&self.theta_deg) {
            return Err(Error::invalid(format!(
                "theta must be in [0, 90] degrees, got {}",
                self.theta_deg
            )));
        }
        if !(self.psi >= 0.0) {
            return Err(Error::invalid(format!(
                "psi must be >= 0, got {}",
                self.psi
            )));
        }
        if self.k < 1 {
            return Err(Error::invalid("k must be >= 1"));
        }
        Ok(())
    }
}

/// Neighbour lists, nearest first.
pub type NeighborTable = Vec<Vec<usize>>;

// ---------------------------------------------------------------------------
// kd-tree

#[derive(Debug, Clone, Copy)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Static kd-tree over a point slice. Queries are exact, with ties in
/// distance resolved toward the lower point index.
pub struct KdTree<'a> {
    points: &'a [Point3],
    perm: Vec<usize>,
    nodes: Vec<Node>,
}

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    d2: f64,
    idx: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2.total_cmp(&other.d2).then(self.idx.cmp(&other.idx))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [Point3]) -> Self {
        let mut tree = KdTree {
            points,
            perm: (0..points.len()).collect(),
            nodes: Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = self.points[self.perm[start]];
        let mut hi = lo;
        for &i in &self.perm[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let axis = (hi - lo).imax();
        let mid = start + (end - start) / 2;
        let pts = self.points;
        self.perm[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts[a][axis].total_cmp(&pts[b][axis]).then(a.cmp(&b))
        });
        let value = pts[self.perm[mid]][axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// The `k` nearest points to `points[query]`, excluding itself.
    pub fn nearest_excluding(&self, query: usize, k: usize) -> Vec<usize> {
        if k == 0 || self.points.len() <= 1 {
            return Vec::new();
        }
        let q = self.points[query];
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, &q, query, k, &mut heap);
        let mut found = heap.into_vec();
        found.sort();
        found.into_iter().map(|c| c.idx).collect()
    }

    fn search(
        &self,
        node: usize,
        q: &Point3,
        skip: usize,
        k: usize,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.perm[start..end] {
                    if i == skip {
                        continue;
                    }
                    let c = Candidate {
                        d2: (self.points[i] - q).norm_squared(),
                        idx: i,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("heap is full") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, q, skip, k, heap);
                // Equal distances may still win on index, so prune strictly.
                let bound = diff * diff;
                if heap.len() < k || bound <= heap.peek().expect("heap is full").d2 {
                    self.search(far, q, skip, k, heap);
                }
            }
        }
    }
}

/// k nearest neighbours of every point (excluding itself).
pub fn knn_points(points: &[Point3], k: usize) -> NeighborTable {
    let tree = KdTree::new(points);
    par::map_range(points.len(), |i| tree.nearest_excluding(i, k))
}

/// k nearest voxel planes of every plane, by centroid distance.
pub fn knn_index(planes: &[VoxelPlane], k: usize) -> NeighborTable {
    let centroids: Vec<Point3> = planes.iter().map(|p| p.centroid).collect();
    knn_points(&centroids, k)
}

// ---------------------------------------------------------------------------
// Region growing

/// Record of which seed admitted a member.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Admission {
    pub member: usize,
    pub seed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: usize,
    /// Voxel-plane indices, ascending.
    pub members: Vec<usize>,
    /// Seeds in the order they were expanded.
    pub seed_history: Vec<usize>,
    /// Admission certificates in admission order; the first seed admits itself.
    pub admissions: Vec<Admission>,
}

impl Region {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Segmentation {
    /// Regions by descending size, ids 1..=n in that order.
    pub regions: Vec<Region>,
    /// Planes that ended up in regions smaller than the minimum size.
    pub unsegmented: Vec<usize>,
}

pub fn grow_regions(planes: &[VoxelPlane], params: &GrowParams) -> Result<Segmentation> {
    params.validate()?;
    if planes.is_empty() {
        return Ok(Segmentation::default());
    }
    let table = knn_index(planes, params.k);
    grow_with_table(planes, &table, params)
}

/// Region growing over a precomputed neighbour table.
pub fn grow_with_table(
    planes: &[VoxelPlane],
    table: &NeighborTable,
    params: &GrowParams,
) -> Result<Segmentation> {
    params.validate()?;
    if table.len() != planes.len() {
        return Err(Error::invalid("neighbour table does not match plane count"));
    }
    let n = planes.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        planes[a]
            .residual
            .total_cmp(&planes[b].residual)
            .then(a.cmp(&b))
    });

    let mut assigned = vec![false; n];
    let mut grown: Vec<Region> = Vec::new();
    let mut queue = VecDeque::new();

    for &start in &order {
        if assigned[start] {
            continue;
        }
        assigned[start] = true;
        let mut region = Region {
            id: 0,
            members: vec![start],
            seed_history: Vec::new(),
            admissions: vec![Admission {
                member: start,
                seed: start,
            }],
        };
        queue.clear();
        queue.push_back(start);

        while let Some(seed) = queue.pop_front() {
            region.seed_history.push(seed);
            let sp = &planes[seed];
            for &nb in &table[seed] {
                if assigned[nb] {
                    continue;
                }
                let cand = &planes[nb];
                if acute_angle_deg(&cand.normal, &sp.normal) > params.theta_deg + ANGLE_SLACK_DEG {
                    continue;
                }
                assigned[nb] = true;
                region.members.push(nb);
                region.admissions.push(Admission { member: nb, seed });
                let offset = (cand.centroid - sp.centroid).dot(&sp.normal).abs();
                if offset <= params.psi {
                    queue.push_back(nb);
                }
            }
        }
        region.members.sort_unstable();
        grown.push(region);
    }

    // Stable sort keeps creation (residual) order among equal sizes.
    grown.sort_by_key(|r| std::cmp::Reverse(r.members.len()));
    let mut seg = Segmentation::default();
    for region in grown {
        if region.members.len() < params.min_region_size {
            seg.unsegmented.extend_from_slice(&region.members);
        } else {
            seg.regions.push(region);
        }
    }
    seg.unsegmented.sort_unstable();
    for (i, r) in seg.regions.iter_mut().enumerate() {
        r.id = i + 1;
    }
    Ok(seg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Unit, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive k-nearest scan with index tie-breaking.
    fn brute_knn(points: &[Point3], k: usize) -> NeighborTable {
        (0..points.len())
            .map(|i| {
                let mut d: Vec<(f64, usize)> = (0..points.len())
                    .filter(|&j| j != i)
                    .map(|j| ((points[j] - points[i]).norm_squared(), j))
                    .collect();
                d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                d.into_iter().take(k).map(|(_, j)| j).collect()
            })
            .collect()
    }

    fn plane(c: Point3, n: Vector3<f64>, residual: f64) -> VoxelPlane {
        VoxelPlane {
            voxel_index: [0, 0, 0],
            centroid: c,
            normal: Unit::new_normalize(n),
            residual,
            point_count: 10,
        }
    }

    /// Grid of planes on a patch spanned by (u, v) through `origin`.
    fn patch(origin: Point3, u: Vector3<f64>, v: Vector3<f64>, n: usize) -> Vec<VoxelPlane> {
        let normal = u.cross(&v);
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let c = origin + u * i as f64 + v * j as f64;
                out.push(plane(c, normal, 1e-4 * (i + j) as f64));
            }
        }
        out
    }

    fn rot_z(deg: f64) -> nalgebra::Matrix3<f64> {
        let (s, c) = deg.to_radians().sin_cos();
        nalgebra::Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
    }

    #[test]
    fn single_plane_has_no_neighbours() {
        let t = knn_points(&[Vector3::zeros()], 5);
        assert_eq!(t, vec![Vec::<usize>::new()]);
    }

    #[test]
    fn collinear_ties_go_to_lower_index() {
        let pts = [Vector3::zeros(), Vector3::x(), Vector3::x() * 2.0];
        assert_eq!(knn_points(&pts, 1), vec![vec![1], vec![0], vec![1]]);
    }

    #[test]
    fn kd_tree_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Point3> = (0..200)
            .map(|_| Vector3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        assert_eq!(knn_points(&pts, 7), brute_knn(&pts, 7));
    }

    #[test]
    fn kd_tree_handles_duplicates_and_lattices() {
        let mut pts = Vec::new();
        for i in 0..6 {
            for j in 0..6 {
                pts.push(Vector3::new(i as f64, j as f64, 0.0));
                pts.push(Vector3::new(i as f64, j as f64, 0.0));
            }
        }
        for k in [1, 4, 9, 100] {
            assert_eq!(knn_points(&pts, k), brute_knn(&pts, k));
        }
    }

    #[test]
    fn invalid_params() {
        let p = [plane(Vector3::zeros(), Vector3::z(), 0.0)];
        for bad in [
            GrowParams {
                theta_deg: -1.0,
                ..Default::default()
            },
            GrowParams {
                theta_deg: 91.0,
                ..Default::default()
            },
            GrowParams {
                psi: -0.1,
                ..Default::default()
            },
            GrowParams {
                k: 0,
                ..Default::default()
            },
        ] {
            assert!(matches!(
                grow_regions(&p, &bad),
                Err(Error::InvalidArgument(_))
            ));
        }
    }

    #[test]
    fn homogeneous_input_is_one_region() {
        let planes = patch(Vector3::zeros(), Vector3::x(), Vector3::y(), 8);
        let params = GrowParams {
            theta_deg: 3.0,
            psi: 1e3,
            ..Default::default()
        };
        let seg = grow_regions(&planes, &params).unwrap();
        assert_eq!(seg.regions.len(), 1);
        assert_eq!(seg.regions[0].members, (0..64).collect::<Vec<_>>());
        assert!(seg.unsegmented.is_empty());
    }

    #[test]
    fn orthogonal_patches_split() {
        let mut planes = patch(Vector3::zeros(), Vector3::x(), Vector3::y(), 6);
        planes.extend(patch(
            Vector3::new(0.0, 6.0, 0.0),
            Vector3::x(),
            Vector3::z(),
            6,
        ));
        let params = GrowParams {
            theta_deg: 3.0,
            psi: 1e3,
            ..Default::default()
        };
        let seg = grow_regions(&planes, &params).unwrap();
        assert_eq!(seg.regions.len(), 2);
        for r in &seg.regions {
            let first = &planes[r.members[0]].normal;
            for &m in &r.members {
                assert!(acute_angle_deg(&planes[m].normal, first) <= 3.0);
            }
        }
    }

    /// Three faces hinged along shared edges: A, then B at 15 degrees to A,
    /// then C at 90 degrees to B.
    fn three_face_corner() -> Vec<VoxelPlane> {
        let mut planes = Vec::new();
        // A: vertical face along +x, normal -y.
        planes.extend(patch(Vector3::zeros(), Vector3::x(), Vector3::z(), 6));
        // B: continues from x = 6, turned 15 degrees about z.
        let dir_b = rot_z(15.0) * Vector3::x();
        planes.extend(patch(Vector3::new(6.0, 0.0, 0.0), dir_b, Vector3::z(), 6));
        // C: turned a further 90 degrees.
        let end_b = Vector3::new(6.0, 0.0, 0.0) + dir_b * 6.0;
        let dir_c = rot_z(105.0) * Vector3::x();
        planes.extend(patch(end_b, dir_c, Vector3::z(), 6));
        planes
    }

    #[test]
    fn angular_gaps_bracket_theta() {
        let planes = three_face_corner();
        let count = |theta| {
            let params = GrowParams {
                theta_deg: theta,
                psi: 1e3,
                k: 8,
                min_region_size: 1,
            };
            grow_regions(&planes, &params).unwrap().regions.len()
        };
        assert_eq!(count(3.0), 3);
        assert_eq!(count(30.0), 2);
    }

    #[test]
    fn certificates_partition_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let planes: Vec<VoxelPlane> = (0..400)
            .map(|_| {
                let c = Vector3::new(rng.random(), rng.random(), rng.random::<f64>()) * 10.0;
                let n = Vector3::new(
                    rng.random_range(-0.2..0.2),
                    rng.random_range(-0.2..0.2),
                    1.0,
                );
                plane(c, n, rng.random())
            })
            .collect();
        let params = GrowParams {
            theta_deg: 8.0,
            psi: 2.0,
            k: 6,
            min_region_size: 3,
        };
        let seg = grow_regions(&planes, &params).unwrap();

        let mut seen = vec![0u8; planes.len()];
        for r in &seg.regions {
            assert!(r.members.len() >= 3);
            for &m in &r.members {
                seen[m] += 1;
            }
            assert_eq!(r.admissions.len(), r.members.len());
            for a in &r.admissions {
                assert!(r.seed_history.contains(&a.seed));
                assert!(r.members.binary_search(&a.member).is_ok());
                let ang = acute_angle_deg(&planes[a.member].normal, &planes[a.seed].normal);
                assert!(ang <= params.theta_deg + ANGLE_SLACK_DEG);
            }
        }
        for &u in &seg.unsegmented {
            seen[u] += 1;
        }
        assert!(seen.iter().all(|&c| c == 1));
        assert!(seg.regions.windows(2).all(|w| w[0].len() >= w[1].len()));

        let again = grow_regions(&planes, &params).unwrap();
        assert_eq!(seg, again);
    }

    #[test]
    fn small_regions_go_to_unsegmented_pool() {
        let planes = patch(Vector3::zeros(), Vector3::x(), Vector3::y(), 3);
        let params = GrowParams {
            theta_deg: 3.0,
            psi: 1e3,
            k: 4,
            min_region_size: 10,
        };
        let seg = grow_regions(&planes, &params).unwrap();
        assert!(seg.regions.is_empty());
        assert_eq!(seg.unsegmented.len(), 9);
    }

    #[test]
    fn psi_gates_seed_promotion_only() {
        // A row of parallel planes stepping 1 unit off-plane each time.
        let planes: Vec<VoxelPlane> = (0..5)
            .map(|i| {
                plane(
                    Vector3::new(i as f64, 0.0, i as f64),
                    Vector3::z(),
                    i as f64,
                )
            })
            .collect();
        let params = GrowParams {
            theta_deg: 5.0,
            psi: 0.5,
            k: 1,
            min_region_size: 1,
        };
        let seg = grow_regions(&planes, &params).unwrap();
        // Plane 0 admits 1 (its only neighbour) but 1 is too far off-plane to seed.
        let first = seg.regions.iter().find(|r| r.members.contains(&0)).unwrap();
        assert_eq!(first.members, vec![0, 1]);
        assert_eq!(first.seed_history, vec![0]);
    }
}
