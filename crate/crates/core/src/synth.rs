//! Seeded synthetic scenes with known planar surfaces.
//!
//! A scene is a list of rectangular faces. Points are drawn uniformly on each
//! face, displaced along the face normal by Gaussian noise, and a fraction of
//! uniform outliers is added in an inflated copy of the scene's bounding box.

use nalgebra::{Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cloud_io::{GroundTruthSurface, PointCloud};
use crate::error::{Error, Result};
use crate::geometry::{rodrigues_rotation, Aabb, Point3, Rotation3, UnitVector3};
use crate::orientation::{normal_from_orientation, orientation_from_normal};

/// Reported for horizontal truth faces, whose strike is undefined.
pub const HORIZONTAL_STRIKE_DEG: f64 = 270.0;

/// A rectangle spanned by two orthonormal in-plane axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Face {
    pub center: Point3,
    pub u_axis: UnitVector3,
    pub v_axis: UnitVector3,
    pub width: f64,
    pub height: f64,
}

impl Face {
    pub fn normal(&self) -> UnitVector3 {
        Unit::new_normalize(self.u_axis.cross(&self.v_axis))
    }

    /// Face with the given dip and dip direction; `width` runs along strike
    /// and `height` down the dip.
    pub fn from_orientation(
        center: Point3,
        dip_deg: f64,
        dipdir_deg: f64,
        width: f64,
        height: f64,
    ) -> Result<Self> {
        let n = normal_from_orientation(dip_deg, dipdir_deg)?;
        let (sa, ca) = dipdir_deg.to_radians().sin_cos();
        let strike = Unit::new_normalize(Vector3::new(sa, ca, 0.0));
        let down = Unit::new_normalize(n.cross(&strike));
        Ok(Self {
            center,
            u_axis: strike,
            v_axis: down,
            width,
            height,
        })
    }

    fn transformed(&self, rot: &Rotation3, shift: &Vector3<f64>) -> Self {
        Self {
            center: rot.apply(&self.center) + shift,
            u_axis: rot.apply_unit(&self.u_axis),
            v_axis: rot.apply_unit(&self.v_axis),
            ..self.clone()
        }
    }
}

/// Face spec given as orientation angles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedFace {
    pub center: [f64; 3],
    pub dip_deg: f64,
    pub dipdir_deg: f64,
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SceneShape {
    /// Axis-aligned box, then tilted about the horizontal diagonal (1, 1, 0) and
    /// turned about +z. A tilted box has no vertical faces.
    Box {
        size: [f64; 3],
        open_top: bool,
        tilt_deg: f64,
        yaw_deg: f64,
    },
    /// Right prism over a regular polygon, oriented like `Box`.
    Prism {
        sides: usize,
        circumradius: f64,
        height: f64,
        capped: bool,
        tilt_deg: f64,
        yaw_deg: f64,
    },
    WallSet {
        faces: Vec<OrientedFace>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub shape: SceneShape,
    pub points_per_face: usize,
    /// Noise standard deviation as a fraction of the clean scene's longest extent.
    pub noise_rel: f64,
    /// Outliers as a fraction of the final cloud.
    pub outlier_fraction: f64,
    /// Outliers are drawn in the clean bounding box scaled by this about its center.
    pub outlier_inflation: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SyntheticOutput {
    pub cloud: PointCloud,
    pub truth: Vec<GroundTruthSurface>,
    /// Face index per point, `None` for outliers.
    pub labels: Vec<Option<usize>>,
    pub faces: Vec<Face>,
}

impl SyntheticOutput {
    pub fn outlier_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }
}

fn placement(tilt_deg: f64, yaw_deg: f64) -> Result<Rotation3> {
    let axis = Unit::new_normalize(Vector3::new(1.0, 1.0, 0.0));
    let tilt = rodrigues_rotation(&axis, tilt_deg.to_radians())?;
    let yaw = rodrigues_rotation(&Vector3::z_axis(), yaw_deg.to_radians())?;
    Ok(yaw * tilt)
}

fn axis_face(center: Vector3<f64>, u: Vector3<f64>, v: Vector3<f64>, w: f64, h: f64) -> Face {
    Face {
        center,
        u_axis: Unit::new_normalize(u),
        v_axis: Unit::new_normalize(v),
        width: w,
        height: h,
    }
}

impl SceneShape {
    pub fn faces(&self) -> Result<Vec<Face>> {
        match self {
            SceneShape::Box {
                size,
                open_top,
                tilt_deg,
                yaw_deg,
            } => {
                if size.iter().any(|s| !(*s > 0.0)) {
                    return Err(Error::invalid("box size must be positive"));
                }
                let [a, b, c] = *size;
                let (x, y, z) = (Vector3::x(), Vector3::y(), Vector3::z());
                let mut f = vec![
                    axis_face(x * (a / 2.0), y, z, b, c),
                    axis_face(-x * (a / 2.0), z, y, c, b),
                    axis_face(y * (b / 2.0), z, x, c, a),
                    axis_face(-y * (b / 2.0), x, z, a, c),
                    axis_face(-z * (c / 2.0), y, x, b, a),
                ];
                if !open_top {
                    f.push(axis_face(z * (c / 2.0), x, y, a, b));
                }
                let rot = placement(*tilt_deg, *yaw_deg)?;
                Ok(f.iter()
                    .map(|f| f.transformed(&rot, &Vector3::zeros()))
                    .collect())
            }
            SceneShape::Prism {
                sides,
                circumradius,
                height,
                capped,
                tilt_deg,
                yaw_deg,
            } => {
                if *sides < 3 || !(*circumradius > 0.0) || !(*height > 0.0) {
                    return Err(Error::invalid(
                        "prism needs >= 3 sides and positive radius and height",
                    ));
                }
                let step = std::f64::consts::TAU / *sides as f64;
                let apothem = circumradius * (step / 2.0).cos();
                let side = 2.0 * circumradius * (step / 2.0).sin();
                let mut f: Vec<Face> = (0..*sides)
                    .map(|i| {
                        let ang = (i as f64 + 0.5) * step;
                        let out = Vector3::new(ang.cos(), ang.sin(), 0.0);
                        let along = Vector3::z().cross(&out);
                        axis_face(out * apothem, along, Vector3::z(), side, *height)
                    })
                    .collect();
                if *capped {
                    // Caps are bounded by the circumscribed square; trimmed to
                    // the polygon below.
                    let d = 2.0 * circumradius;
                    f.push(axis_face(
                        Vector3::z() * (height / 2.0),
                        Vector3::x(),
                        Vector3::y(),
                        d,
                        d,
                    ));
                    f.push(axis_face(
                        -Vector3::z() * (height / 2.0),
                        Vector3::y(),
                        Vector3::x(),
                        d,
                        d,
                    ));
                }
                let rot = placement(*tilt_deg, *yaw_deg)?;
                Ok(f.iter()
                    .map(|f| f.transformed(&rot, &Vector3::zeros()))
                    .collect())
            }
            SceneShape::WallSet { faces } => faces
                .iter()
                .map(|f| {
                    Face::from_orientation(
                        Vector3::from(f.center),
                        f.dip_deg,
                        f.dipdir_deg,
                        f.width,
                        f.height,
                    )
                })
                .collect(),
        }
    }

    /// Rejects samples outside the shape where a face rectangle overshoots it.
    fn keeps(&self, face: usize, s: f64, t: f64) -> bool {
        match self {
            SceneShape::Prism {
                sides,
                circumradius,
                capped: true,
                ..
            } if face >= *sides => {
                // (s, t) in [-R, R]^2; keep points inside the regular polygon.
                let step = std::f64::consts::TAU / *sides as f64;
                let apothem = circumradius * (step / 2.0).cos();
                let (px, py) = if face == *sides { (s, t) } else { (t, s) };
                (0..*sides).all(|i| {
                    let ang = (i as f64 + 0.5) * step;
                    px * ang.cos() + py * ang.sin() <= apothem
                })
            }
            _ => true,
        }
    }
}

fn truth_for(id: i64, normal: &UnitVector3) -> Result<GroundTruthSurface> {
    let o = orientation_from_normal(normal);
    let strike = o.strike_deg.unwrap_or(HORIZONTAL_STRIKE_DEG);
    let dipdir = o
        .dipdir_deg
        .unwrap_or((HORIZONTAL_STRIKE_DEG + 90.0) % 360.0);
    GroundTruthSurface::new(id, strike, o.dip_deg, dipdir, o.source_normal.into_inner())
        .map_err(Error::invalid)
}

pub fn generate_synthetic(scene: &SyntheticScene) -> Result<SyntheticOutput> {
    let faces = scene.shape.faces()?;
    if faces.is_empty() {
        return Err(Error::invalid("scene has no faces"));
    }
    if scene.points_per_face == 0 {
        return Err(Error::invalid("points_per_face must be >= 1"));
    }
    if !(scene.noise_rel >= 0.0) || !(0.0..1.0).contains(&scene.outlier_fraction) {
        return Err(Error::invalid(
            "noise must be >= 0 and outlier fraction in [0, 1)",
        ));
    }
    if !(scene.outlier_inflation >= 1.0) {
        return Err(Error::invalid("outlier inflation must be >= 1"));
    }
    for f in &faces {
        if !(f.width > 0.0 && f.height > 0.0) {
            return Err(Error::invalid("face dimensions must be positive"));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
    let mut samples: Vec<(usize, f64, f64)> =
        Vec::with_capacity(faces.len() * scene.points_per_face);
    for (i, f) in faces.iter().enumerate() {
        let mut n = 0;
        while n < scene.points_per_face {
            let s = (rng.random::<f64>() - 0.5) * f.width;
            let t = (rng.random::<f64>() - 0.5) * f.height;
            if scene.shape.keeps(i, s, t) {
                samples.push((i, s, t));
                n += 1;
            }
        }
    }
    let clean: Vec<Point3> = samples
        .iter()
        .map(|&(i, s, t)| {
            let f = &faces[i];
            f.center + f.u_axis.into_inner() * s + f.v_axis.into_inner() * t
        })
        .collect();
    let bounds = Aabb::from_points(&clean).ok_or(Error::EmptyCloud)?;
    let sigma = scene.noise_rel * bounds.longest_extent();

    let mut points = Vec::with_capacity(clean.len());
    let mut labels = Vec::with_capacity(clean.len());
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    for (p, &(i, _, _)) in clean.iter().zip(&samples) {
        let e = if sigma > 0.0 {
            noise.sample(&mut rng)
        } else {
            0.0
        };
        points.push(p + faces[i].normal().into_inner() * e);
        labels.push(Some(i));
    }

    let frac = scene.outlier_fraction;
    let n_out = (clean.len() as f64 * frac / (1.0 - frac)).round() as usize;
    let center = bounds.center();
    let half = bounds.extent() * (scene.outlier_inflation / 2.0);
    for _ in 0..n_out {
        let r = Vector3::new(
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        );
        points.push(center + r.component_mul(&half));
        labels.push(None);
    }

    let truth = faces
        .iter()
        .enumerate()
        .map(|(i, f)| truth_for(i as i64 + 1, &f.normal()))
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticOutput {
        cloud: PointCloud::new(points),
        truth,
        labels,
        faces,
    })
}

/// Surfaces of the reference survey as (dip, dip direction), in id order.
pub const REFERENCE_ORIENTATIONS: [(f64, f64); 6] = [
    (89.0, 177.0),
    (89.0, 94.0),
    (87.0, 69.0),
    (86.0, 192.0),
    (89.0, 80.0),
    (40.0, 89.0),
];

/// A 20 m block: three parallel east-facing walls (terraced rows), a
/// south-facing wall at each end and a roof dipping east, oriented like the
/// reference survey surfaces. North is +x and east is -y.
pub fn reference_scene(seed: u64) -> SyntheticScene {
    let (w, h, r) = (20.0, 16.0, 13.0);
    let roof = 40f64.to_radians();
    let o = REFERENCE_ORIENTATIONS;
    let face = |center: [f64; 3], i: usize, height: f64| OrientedFace {
        center,
        dip_deg: o[i].0,
        dipdir_deg: o[i].1,
        width: w,
        height,
    };
    SyntheticScene {
        shape: SceneShape::WallSet {
            faces: vec![
                face([-w / 2.0, 0.0, h / 2.0], 0, h),
                face([0.0, -w / 2.0, h / 2.0], 1, h),
                face([0.0, 0.3 * w, h / 2.0], 2, h),
                face([w / 2.0, 0.0, h / 2.0], 3, h),
                face([0.0, -0.1 * w, h / 2.0], 4, h),
                face(
                    [
                        0.0,
                        -w / 2.0 + r * roof.cos() / 2.0,
                        h + r * roof.sin() / 2.0,
                    ],
                    5,
                    r,
                ),
            ],
        },
        points_per_face: 10_000,
        noise_rel: 0.003,
        outlier_fraction: 0.02,
        outlier_inflation: 10.0,
        seed,
    }
}
