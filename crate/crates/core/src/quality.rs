//! Normalized orientation error scores.
//!
//! Per component: absolute (circular for azimuths) difference scaled by the
//! component's range. Per region: mean of the three components. Per run:
//! root-sum-square of region scores divided by the number of truth surfaces.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cloud_io::GroundTruthSurface;
use crate::error::{Error, Result};
use crate::geometry::{acute_angle_deg, UnitVector3};
use crate::orientation::{circular_diff_deg, PlanarOrientation, HORIZONTAL_DIP_DEG};

pub const AZIMUTH_RANGE: (f64, f64) = (0.0, 360.0);
pub const DIP_RANGE: (f64, f64) = (0.0, 90.0);
/// Region/truth pairs further apart than this are never matched.
pub const MATCH_GATE_DEG: f64 = 30.0;

pub fn z_component(measured: f64, truth: f64, p_min: f64, p_max: f64, circular: bool) -> f64 {
    let diff = if circular {
        circular_diff_deg(measured, truth)
    } else {
        (measured - truth).abs()
    };
    ((diff - p_min) / (p_max - p_min)).clamp(0.0, 1.0)
}

pub fn z_region(z_strike: f64, z_dip: f64, z_dipdir: f64) -> f64 {
    (z_strike + z_dip + z_dipdir) / 3.0
}

pub fn z_run(region_scores: &[f64]) -> Result<f64> {
    if region_scores.is_empty() {
        return Err(Error::invalid("run score needs at least one region score"));
    }
    let ss: f64 = region_scores.iter().map(|z| z * z).sum();
    Ok(ss.sqrt() / region_scores.len() as f64)
}

/// A measured region as seen by the scorer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasuredRegion {
    pub region_id: usize,
    pub normal: UnitVector3,
    pub orientation: PlanarOrientation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub region_id: usize,
    pub truth_id: i64,
    pub angle_deg: f64,
}

/// Greedy minimum-angle assignment; each region and each truth is used at
/// most once. Ties go to the lower (measured, truth) list position.
pub fn match_regions(measured: &[MeasuredRegion], truth: &[GroundTruthSurface]) -> Vec<Match> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, m) in measured.iter().enumerate() {
        for (j, t) in truth.iter().enumerate() {
            let a = acute_angle_deg(&m.normal, &t.normal);
            if a <= MATCH_GATE_DEG {
                pairs.push((a, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_m = vec![false; measured.len()];
    let mut used_t = vec![false; truth.len()];
    let mut out = Vec::new();
    for (a, i, j) in pairs {
        if used_m[i] || used_t[j] {
            continue;
        }
        used_m[i] = true;
        used_t[j] = true;
        out.push(Match {
            region_id: measured[i].region_id,
            truth_id: truth[j].id,
            angle_deg: a,
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentScores {
    pub z_strike: f64,
    pub z_dip: f64,
    pub z_dipdir: f64,
    pub z_region: f64,
}

impl ComponentScores {
    pub const WORST: ComponentScores = ComponentScores {
        z_strike: 1.0,
        z_dip: 1.0,
        z_dipdir: 1.0,
        z_region: 1.0,
    };
}

/// Scores one measurement against one truth surface.
///
/// An undefined measured azimuth scores 0 when the truth is horizontal too
/// and 1 otherwise.
pub fn score_pair(m: &PlanarOrientation, t: &GroundTruthSurface) -> ComponentScores {
    let truth_flat = t.dip_deg < HORIZONTAL_DIP_DEG;
    let az = |measured: Option<f64>, truth: f64| match measured {
        Some(v) if !truth_flat => z_component(v, truth, AZIMUTH_RANGE.0, AZIMUTH_RANGE.1, true),
        None if truth_flat => 0.0,
        Some(_) if truth_flat => 0.0,
        _ => 1.0,
    };
    let z_strike = az(m.strike_deg, t.strike_deg);
    let z_dip = z_component(m.dip_deg, t.dip_deg, DIP_RANGE.0, DIP_RANGE.1, false);
    let z_dipdir = az(m.dipdir_deg, t.dipdir_deg);
    ComponentScores {
        z_strike,
        z_dip,
        z_dipdir,
        z_region: z_region(z_strike, z_dip, z_dipdir),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthScore {
    pub truth_id: i64,
    pub region_id: Option<usize>,
    pub angle_deg: Option<f64>,
    pub scores: ComponentScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityBreakdown {
    /// One entry per truth surface, in truth order.
    pub per_truth: Vec<TruthScore>,
    pub z_run: f64,
    /// region id -> truth id
    pub matching: BTreeMap<usize, i64>,
    pub matched: usize,
    pub unmatched_truths: usize,
}

pub fn score(
    measured: &[MeasuredRegion],
    truth: &[GroundTruthSurface],
) -> Result<QualityBreakdown> {
    if truth.is_empty() {
        return Err(Error::invalid("no ground-truth surfaces to score against"));
    }
    let matches = match_regions(measured, truth);
    let by_truth: BTreeMap<i64, &Match> = matches.iter().map(|m| (m.truth_id, m)).collect();
    let per_truth: Vec<TruthScore> = truth
        .iter()
        .map(|t| match by_truth.get(&t.id) {
            Some(m) => {
                let region = measured
                    .iter()
                    .find(|r| r.region_id == m.region_id)
                    .expect("matched region exists");
                TruthScore {
                    truth_id: t.id,
                    region_id: Some(m.region_id),
                    angle_deg: Some(m.angle_deg),
                    scores: score_pair(&region.orientation, t),
                }
            }
            None => TruthScore {
                truth_id: t.id,
                region_id: None,
                angle_deg: None,
                scores: ComponentScores::WORST,
            },
        })
        .collect();
    let regions: Vec<f64> = per_truth.iter().map(|s| s.scores.z_region).collect();
    Ok(QualityBreakdown {
        z_run: z_run(&regions)?,
        matching: matches.iter().map(|m| (m.region_id, m.truth_id)).collect(),
        matched: matches.len(),
        unmatched_truths: truth.len() - matches.len(),
        per_truth,
    })
}
