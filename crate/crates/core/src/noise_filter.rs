//! Global Mahalanobis-distance outlier filter.
//!
//! One mean/covariance model is fitted to the whole cloud. A point is kept
//! when its Mahalanobis distance from the mean is at most `sigma`, so the
//! threshold is expressed in standard-deviation units along each principal
//! axis of the cloud.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::cloud_io::PointCloud;
use crate::error::{Error, Result};
use crate::geometry::{symmetric_eigen, Point3};
use crate::par;

/// Threshold used when none is given.
pub const DEFAULT_SIGMA: f64 = 4.0;

const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct MahalanobisModel {
    pub mean: Point3,
    pub covariance: Matrix3<f64>,
    pub inverse_covariance: Matrix3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub kept: usize,
    pub removed: usize,
    pub sigma: f64,
}

/// Fits mean and sample covariance (normalized by n - 1).
pub fn fit_mahalanobis(cloud: &PointCloud) -> Result<MahalanobisModel> {
    let n = cloud.len();
    if n < 4 {
        return Err(Error::degenerate(format!(
            "covariance model needs at least 4 points, got {n}"
        )));
    }

    // Fixed-chunk partial sums keep the result independent of thread count.
    let sums = par::map_chunks(&cloud.points, |chunk| {
        chunk.iter().fold(Vector3::zeros(), |acc, p| acc + p)
    });
    let mean = sums.iter().fold(Vector3::zeros(), |acc, s| acc + s) / n as f64;

    let scatters = par::map_chunks(&cloud.points, |chunk| {
        chunk.iter().fold(Matrix3::zeros(), |acc, p| {
            let d = p - mean;
            acc + d * d.transpose()
        })
    });
    let scatter = scatters.iter().fold(Matrix3::zeros(), |acc, s| acc + s);
    let covariance = scatter / (n - 1) as f64;

    let (vals, _) = symmetric_eigen(&covariance)?;
    if !(vals[0] > 0.0) || vals[2] / vals[0] > MAX_CONDITION {
        return Err(Error::degenerate(format!(
            "covariance is singular or ill-conditioned (eigenvalues {:e}, {:e}, {:e})",
            vals[0], vals[1], vals[2]
        )));
    }
    let inverse_covariance = covariance
        .try_inverse()
        .ok_or_else(|| Error::degenerate("covariance is not invertible"))?;

    Ok(MahalanobisModel {
        mean,
        covariance,
        inverse_covariance,
    })
}

impl MahalanobisModel {
    pub fn distance(&self, p: &Point3) -> f64 {
        mahalanobis_distance(self, p)
    }
}

/// `sqrt((p - mean)^T H^-1 (p - mean))`.
pub fn mahalanobis_distance(model: &MahalanobisModel, p: &Point3) -> f64 {
    let d = p - model.mean;
    d.dot(&(model.inverse_covariance * d)).max(0.0).sqrt()
}

/// Keeps the points within `sigma` of the cloud's own distribution.
pub fn filter_outliers(cloud: &PointCloud, sigma: f64) -> Result<(PointCloud, FilterReport)> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("sigma must be > 0, got {sigma}")));
    }
    let model = fit_mahalanobis(cloud)?;
    Ok(filter_with_model(cloud, &model, sigma))
}

/// Applies an already-fitted model.
pub fn filter_with_model(
    cloud: &PointCloud,
    model: &MahalanobisModel,
    sigma: f64,
) -> (PointCloud, FilterReport) {
    let keep = par::map(&cloud.points, |p| mahalanobis_distance(model, p) <= sigma);
    let kept_idx: Vec<usize> = keep
        .iter()
        .enumerate()
        .filter_map(|(i, &k)| k.then_some(i))
        .collect();
    let report = FilterReport {
        kept: kept_idx.len(),
        removed: cloud.len() - kept_idx.len(),
        sigma,
    };
    (cloud.select(&kept_idx), report)
}
