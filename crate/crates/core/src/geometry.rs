//! 3D primitives and the small amount of linear algebra the pipeline needs:
//! Rodrigues rotations and a deterministic symmetric 3x3 eigensolver.

use std::ops::Mul;

use nalgebra::{Matrix3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in scene units.
pub type Point3 = Vector3<f64>;

/// A unit-norm direction.
pub type UnitVector3 = Unit<Vector3<f64>>;

const SYMMETRY_TOL: f64 = 1e-9;
const ORTHO_TOL: f64 = 1e-9;

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    pub fn new(min: Point3, max: Point3) -> Result<Self> {
        if (0..3).any(|i| !(min[i] <= max[i])) {
            return Err(Error::invalid("aabb min must be <= max componentwise"));
        }
        Ok(Self { min, max })
    }

    /// Tight box around `points`, or `None` when the slice is empty.
    pub fn from_points(points: &[Point3]) -> Option<Self> {
        let first = *points.first()?;
        let (min, max) = points
            .iter()
            .fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
        Some(Self { min, max })
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn longest_extent(&self) -> f64 {
        self.extent().max()
    }

    pub fn center(&self) -> Point3 {
        (self.min + self.max) * 0.5
    }

    /// Grows the box by `margin` on every side.
    pub fn expanded(&self, margin: f64) -> Self {
        let m = Vector3::repeat(margin);
        Self {
            min: self.min - m,
            max: self.max + m,
        }
    }

    pub fn contains(&self, p: &Point3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

/// A proper rotation matrix (orthogonal, determinant +1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation3(Matrix3<f64>);

impl Rotation3 {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Wraps `m`, checking orthogonality and orientation.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("rotation matrix has non-finite entries"));
        }
        let err = (m.transpose() * m - Matrix3::identity()).abs().max();
        if err > ORTHO_TOL {
            return Err(Error::invalid(format!(
                "matrix is not orthogonal (max deviation {err:e})"
            )));
        }
        if (m.determinant() - 1.0).abs() > ORTHO_TOL {
            return Err(Error::invalid("matrix determinant is not +1"));
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    pub fn apply_unit(&self, v: &UnitVector3) -> UnitVector3 {
        Unit::new_normalize(self.0 * v.into_inner())
    }
}

impl Mul for Rotation3 {
    type Output = Rotation3;

    fn mul(self, rhs: Rotation3) -> Rotation3 {
        Rotation3(self.0 * rhs.0)
    }
}

/// Skew-symmetric cross-product matrix `K` with `K v = a x v`.
pub fn skew(a: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

/// Rotation by `angle` radians about `axis`: `R = I + sin(a) K + (1 - cos(a)) K^2`.
pub fn rodrigues_rotation(axis: &UnitVector3, angle: f64) -> Result<Rotation3> {
    if !angle.is_finite() {
        return Err(Error::invalid("rotation angle must be finite"));
    }
    let k = skew(axis.as_ref());
    let (s, c) = angle.sin_cos();
    Ok(Rotation3(Matrix3::identity() + k * s + (k * k) * (1.0 - c)))
}

/// Flips `v` so that z > 0, or for z == 0 so that x > 0, then y > 0.
///
/// The rule is symmetric under negation: `canonical_sign(v) == canonical_sign(-v)`.
pub fn canonical_sign(v: Vector3<f64>) -> Vector3<f64> {
    let flip = v.z < 0.0 || (v.z == 0.0 && (v.x < 0.0 || (v.x == 0.0 && v.y < 0.0)));
    if flip {
        -v
    } else {
        v
    }
}

/// Unsigned acute angle between two directions, in degrees.
pub fn acute_angle_deg(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    let cos = (a.dot(b) / (na * nb)).abs().min(1.0);
    cos.acos().to_degrees()
}

fn check_symmetric(m: &Matrix3<f64>) -> Result<()> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    let scale = m.abs().max().max(1.0);
    let asym = (m - m.transpose()).abs().max();
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::invalid(format!(
            "matrix is not symmetric (max asymmetry {asym:e})"
        )));
    }
    Ok(())
}

/// Eigen-decomposition of a symmetric 3x3 matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order with matching eigenvector columns.
/// Eigenvectors are raw (not sign-normalized).
pub fn symmetric_eigen(m: &Matrix3<f64>) -> Result<([f64; 3], Matrix3<f64>)> {
    check_symmetric(m)?;
    let mut a = (m + m.transpose()) * 0.5;
    let mut v = Matrix3::<f64>::identity();

    for _ in 0..64 {
        let off = a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2);
        let diag = a[(0, 0)].powi(2) + a[(1, 1)].powi(2) + a[(2, 2)].powi(2);
        if off == 0.0 || off <= 1e-36 * diag {
            break;
        }
        for &(p, q) in &[(0usize, 1usize), (0, 2), (1, 2)] {
            let apq = a[(p, q)];
            if apq == 0.0 {
                continue;
            }
            let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let mut j = Matrix3::<f64>::identity();
            j[(p, p)] = c;
            j[(q, q)] = c;
            j[(p, q)] = s;
            j[(q, p)] = -s;
            a = j.transpose() * a * j;
            // Clean the annihilated pair so round-off does not linger.
            a[(p, q)] = 0.0;
            a[(q, p)] = 0.0;
            v *= j;
        }
    }

    let mut order = [0usize, 1, 2];
    let vals = [a[(0, 0)], a[(1, 1)], a[(2, 2)]];
    order.sort_by(|&i, &j| vals[i].total_cmp(&vals[j]).then(i.cmp(&j)));
    let sorted_vals = [vals[order[0]], vals[order[1]], vals[order[2]]];
    let sorted_vecs = Matrix3::from_columns(&[
        v.column(order[0]).into_owned(),
        v.column(order[1]).into_owned(),
        v.column(order[2]).into_owned(),
    ]);
    Ok((sorted_vals, sorted_vecs))
}

/// The eigenpair with minimal eigenvalue, sign-normalized by [`canonical_sign`].
pub fn smallest_eigenvector(m: &Matrix3<f64>) -> Result<(f64, UnitVector3)> {
    let (vals, vecs) = symmetric_eigen(m)?;
    let v = canonical_sign(vecs.column(0).into_owned());
    Ok((vals[0], Unit::new_normalize(v)))
}

/// The eigenpair with maximal eigenvalue, sign-normalized by [`canonical_sign`].
pub fn largest_eigenvector(m: &Matrix3<f64>) -> Result<(f64, UnitVector3)> {
    let (vals, vecs) = symmetric_eigen(m)?;
    let v = canonical_sign(vecs.column(2).into_owned());
    Ok((vals[2], Unit::new_normalize(v)))
}
