//! Slow, obviously-correct reference implementations used to check the
//! pipeline, plus the survey fixture.

use nalgebra::Vector3;

/// Survey ground truth: listed angles and normals for six surfaces.
pub const GROUND_TRUTH_FIXTURE: &str = include_str!("../../core/fixtures/ground_truth.csv");

/// The `k` nearest points to `points[query]` by a full scan, excluding the
/// query itself. Ties on distance go to the lower index.
pub fn brute_force_knn(points: &[Vector3<f64>], query: usize, k: usize) -> Vec<usize> {
    let q = points[query];
    let mut cand: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != query)
        .map(|(i, p)| ((p - q).norm_squared(), i))
        .collect();
    let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < cand.len() {
        cand.select_nth_unstable_by(k, order);
        cand.truncate(k);
    }
    cand.sort_by(order);
    cand.into_iter().map(|(_, i)| i).collect()
}

/// Perimeter of the axis-aligned box of `points` after rotating them by `phi`.
pub fn brute_force_perimeter(points: &[(f64, f64)], phi: f64) -> f64 {
    let (s, c) = phi.sin_cos();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in points {
        let (rx, ry) = (x * c - y * s, x * s + y * c);
        x0 = x0.min(rx);
        x1 = x1.max(rx);
        y0 = y0.min(ry);
        y1 = y1.max(ry);
    }
    2.0 * ((x1 - x0) + (y1 - y0))
}

/// Smallest perimeter over `phi` = 0, step, 2 step, ... below 90 degrees.
pub fn grid_min_perimeter(points: &[(f64, f64)], step_deg: f64) -> f64 {
    let steps = (90.0 / step_deg).round() as usize;
    (0..steps)
        .map(|i| brute_force_perimeter(points, (i as f64 * step_deg).to_radians()))
        .fold(f64::INFINITY, f64::min)
}

/// Distance between two angles modulo a quarter turn, in radians.
pub fn quarter_turn_distance(a: f64, b: f64) -> f64 {
    let q = std::f64::consts::FRAC_PI_2;
    let d = (a - b).rem_euclid(q);
    d.min(q - d)
}
