//! Strike, dip and dip direction from a plane normal.
//!
//! Frame: +x is North, -y is East, +z is up. Azimuths are measured clockwise
//! from North; strike follows the right-hand rule (dip direction minus 90).

use nalgebra::{Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::UnitVector3;

/// Below this dip the strike and dip direction are not reported.
pub const HORIZONTAL_DIP_DEG: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarOrientation {
    /// `None` for near-horizontal planes.
    pub strike_deg: Option<f64>,
    pub dip_deg: f64,
    /// `None` for near-horizontal planes.
    pub dipdir_deg: Option<f64>,
    /// Upward-pointing unit normal the angles were derived from.
    pub source_normal: UnitVector3,
}

impl PlanarOrientation {
    pub fn is_horizontal(&self) -> bool {
        self.dipdir_deg.is_none()
    }
}

fn wrap360(deg: f64) -> f64 {
    let w = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs.
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

pub fn orientation_from_normal(n: &UnitVector3) -> PlanarOrientation {
    let mut v = n.into_inner();
    if v.z < 0.0 || (v.z == 0.0 && (v.x, v.y) < (0.0, 0.0)) {
        v = -v;
    }
    let dip = v.z.clamp(-1.0, 1.0).acos().to_degrees();
    let (strike, dipdir) = if dip < HORIZONTAL_DIP_DEG {
        (None, None)
    } else {
        let dd = wrap360((-v.y).atan2(v.x).to_degrees());
        (Some(wrap360(dd - 90.0)), Some(dd))
    };
    PlanarOrientation {
        strike_deg: strike,
        dip_deg: dip,
        dipdir_deg: dipdir,
        source_normal: Unit::new_unchecked(v),
    }
}

/// Upward unit normal of a plane with the given dip and dip direction.
pub fn normal_from_orientation(dip_deg: f64, dipdir_deg: f64) -> Result<UnitVector3> {
    if !(0.0..=90.0).contains(&dip_deg) || !dipdir_deg.is_finite() {
        return Err(Error::invalid(format!(
            "dip must be in [0, 90] and dip direction finite, got {dip_deg}, {dipdir_deg}"
        )));
    }
    let (sd, cd) = dip_deg.to_radians().sin_cos();
    let (sa, ca) = dipdir_deg.to_radians().sin_cos();
    Ok(Unit::new_normalize(Vector3::new(sd * ca, -sd * sa, cd)))
}

/// Smallest absolute difference between two angles, in [0, 180].
pub fn circular_diff_deg(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}
