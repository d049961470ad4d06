//! End-to-end runs, parameter sweeps and file exports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cloud_io::{
    read_ground_truth, read_ply, write_ply, GroundTruthSurface, PointCloud, Rgb,
};
use crate::error::{Error, Result, Stage, StageExt};
use crate::noise_filter::{filter_outliers, FilterReport, DEFAULT_SIGMA};
use crate::orientation::{orientation_from_normal, PlanarOrientation};
use crate::par;
use crate::quality::{score, MeasuredRegion, QualityBreakdown};
use crate::region_plane::{build_region_plane, RegionPlane};
use crate::segmentation::{
    grow_regions, GrowParams, Segmentation, DEFAULT_K, DEFAULT_MIN_REGION_SIZE, DEFAULT_PSI,
    DEFAULT_THETA_DEG,
};
use crate::voxel_fit::{
    build_grid, fit_all, VoxelGrid, VoxelPlane, DEFAULT_MIN_POINTS, DEFAULT_ZETA,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Input PLY; `None` when running on an in-memory cloud.
    pub input: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub zeta: f64,
    pub theta_deg: f64,
    pub psi: f64,
    pub k: usize,
    pub sigma: f64,
    pub min_points: usize,
    pub min_region_size: usize,
    /// Interpret `psi` as a multiple of the voxel edge length.
    pub psi_relative: bool,
    /// Aggregate region normals without point-count weights.
    pub unweighted_normals: bool,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub binary_ply: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            truth: None,
            zeta: DEFAULT_ZETA,
            theta_deg: DEFAULT_THETA_DEG,
            psi: DEFAULT_PSI,
            k: DEFAULT_K,
            sigma: DEFAULT_SIGMA,
            min_points: DEFAULT_MIN_POINTS,
            min_region_size: DEFAULT_MIN_REGION_SIZE,
            psi_relative: false,
            unweighted_normals: false,
            seed: 0,
            out_dir: None,
            binary_ply: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.zeta > 0.0 && self.zeta <= 1.0) {
            return Err(Error::invalid(format!(
                "zeta must be in (0, 1], got {}",
                self.zeta
            )));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::invalid(format!(
                "sigma must be > 0, got {}",
                self.sigma
            )));
        }
        if self.min_points < 3 {
            return Err(Error::invalid("min_points must be >= 3"));
        }
        if self.min_region_size < 1 {
            return Err(Error::invalid("min_region_size must be >= 1"));
        }
        self.grow_params(1.0).validate()
    }

    fn grow_params(&self, edge_length: f64) -> GrowParams {
        GrowParams {
            theta_deg: self.theta_deg,
            psi: if self.psi_relative {
                self.psi * edge_length
            } else {
                self.psi
            },
            k: self.k,
            min_region_size: self.min_region_size,
        }
    }
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub read_s: f64,
    pub filter_s: f64,
    pub voxel_s: f64,
    /// Neighbour index plus region growing.
    pub grow_s: f64,
    pub planes_s: f64,
    /// Orientation extraction and scoring.
    pub score_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunCounts {
    pub input_points: usize,
    pub kept_points: usize,
    pub voxel_edge: f64,
    pub grid_dims: [usize; 3],
    pub occupied_voxels: usize,
    pub voxel_planes: usize,
    pub skipped_too_few: usize,
    pub skipped_collinear: usize,
    pub regions: usize,
    pub unsegmented_planes: usize,
    /// Coplanarity threshold actually used, in scene units.
    pub effective_psi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSummary {
    pub id: usize,
    pub voxel_planes: usize,
    pub points: usize,
    pub plane: RegionPlane,
    pub orientation: PlanarOrientation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub config: RunConfig,
    pub timings: StageTimings,
    pub filter: FilterReport,
    pub counts: RunCounts,
    pub regions: Vec<RegionSummary>,
    pub quality: Option<QualityBreakdown>,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: RunReport =
            serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))?;
        if report.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "report schema version {} is not supported (expected {SCHEMA_VERSION})",
                report.schema_version
            )));
        }
        Ok(report)
    }

    /// JSON with every timing zeroed; identical across reruns of one config.
    pub fn deterministic_json(&self) -> Result<String> {
        RunReport {
            timings: StageTimings::default(),
            ..self.clone()
        }
        .to_json()
    }

    pub fn measured_regions(&self) -> Vec<MeasuredRegion> {
        self.regions
            .iter()
            .map(|r| MeasuredRegion {
                region_id: r.id,
                normal: r.plane.normal,
                orientation: r.orientation,
            })
            .collect()
    }

    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        let c = &self.counts;
        let _ = writeln!(
            s,
            "points: {} read, {} kept ({} removed at sigma {})",
            c.input_points, c.kept_points, self.filter.removed, self.filter.sigma
        );
        let _ = writeln!(
            s,
            "voxels: edge {:.4}, grid {}x{}x{}, {} occupied, {} planes",
            c.voxel_edge,
            c.grid_dims[0],
            c.grid_dims[1],
            c.grid_dims[2],
            c.occupied_voxels,
            c.voxel_planes
        );
        let _ = writeln!(
            s,
            "regions: {} ({} voxel planes unsegmented)",
            c.regions, c.unsegmented_planes
        );
        let fmt = |v: Option<f64>| v.map_or_else(|| "  n/a".to_string(), |v| format!("{v:5.1}"));
        let _ = writeln!(
            s,
            "\n  id  planes  points  strike    dip  dipdir  width x height"
        );
        for r in &self.regions {
            let o = &r.orientation;
            let _ = writeln!(
                s,
                "{:4}  {:6}  {:6}   {}  {:5.1}   {}  {:.2} x {:.2}",
                r.id,
                r.voxel_planes,
                r.points,
                fmt(o.strike_deg),
                o.dip_deg,
                fmt(o.dipdir_deg),
                2.0 * r.plane.half_extents.0,
                2.0 * r.plane.half_extents.1
            );
        }
        if let Some(q) = &self.quality {
            let _ = writeln!(
                s,
                "\nquality: z_run {:.4}, {} matched, {} unmatched",
                q.z_run, q.matched, q.unmatched_truths
            );
            for t in &q.per_truth {
                let region = t
                    .region_id
                    .map_or_else(|| "-".to_string(), |r| r.to_string());
                let _ = writeln!(
                    s,
                    "  truth {:3} <- region {:>3}: z {:.4} (strike {:.4}, dip {:.4}, dipdir {:.4})",
                    t.truth_id,
                    region,
                    t.scores.z_region,
                    t.scores.z_strike,
                    t.scores.z_dip,
                    t.scores.z_dipdir
                );
            }
        }
        let t = &self.timings;
        let _ = writeln!(
            s,
            "\ntime: total {:.3}s (read {:.3}, filter {:.3}, voxel {:.3}, grow {:.3}, planes {:.3}, score {:.3})",
            t.total_s, t.read_s, t.filter_s, t.voxel_s, t.grow_s, t.planes_s, t.score_s
        );
        s
    }
}

/// Everything a run produced, for callers that need more than the report.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub report: RunReport,
    pub cloud: PointCloud,
    pub grid: VoxelGrid,
    pub planes: Vec<VoxelPlane>,
    pub segmentation: Segmentation,
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

/// Runs every stage after reading on an in-memory cloud.
pub fn run_on_cloud(
    input: &PointCloud,
    truth: Option<&[GroundTruthSurface]>,
    config: &RunConfig,
) -> Result<PipelineOutput> {
    let start = Instant::now();
    config.validate()?;

    let (filtered, filter_s) = timed(|| filter_outliers(input, config.sigma));
    let (cloud, filter) = filtered.stage(Stage::Filter)?;

    let (voxels, voxel_s) = timed(|| -> Result<_> {
        let grid = build_grid(&cloud, config.zeta)?;
        let fits = fit_all(&grid, &cloud, config.min_points);
        Ok((grid, fits))
    });
    let (grid, fits) = voxels.stage(Stage::Voxel)?;

    let params = config.grow_params(grid.edge_length);
    let (grown, grow_s) = timed(|| grow_regions(&fits.planes, &params));
    let segmentation = grown.stage(Stage::Segmentation)?;

    let weighted = !config.unweighted_normals;
    let (built, planes_s) = timed(|| {
        par::map(&segmentation.regions, |r| {
            build_region_plane(r, &fits.planes, &grid, &cloud, weighted)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()
    });
    let region_planes = built.stage(Stage::RegionPlane)?;

    let (scored, score_s) = timed(|| -> Result<_> {
        let regions: Vec<RegionSummary> = segmentation
            .regions
            .iter()
            .zip(region_planes)
            .map(|(r, plane)| RegionSummary {
                id: r.id,
                voxel_planes: r.members.len(),
                points: r.members.iter().map(|&m| fits.planes[m].point_count).sum(),
                orientation: orientation_from_normal(&plane.normal),
                plane,
            })
            .collect();
        let quality = match truth {
            Some(t) => {
                let measured: Vec<MeasuredRegion> = regions
                    .iter()
                    .map(|r| MeasuredRegion {
                        region_id: r.id,
                        normal: r.plane.normal,
                        orientation: r.orientation,
                    })
                    .collect();
                Some(score(&measured, t).stage(Stage::Quality)?)
            }
            None => None,
        };
        Ok((regions, quality))
    });
    let (regions, quality) = scored?;

    let counts = RunCounts {
        input_points: input.len(),
        kept_points: cloud.len(),
        voxel_edge: grid.edge_length,
        grid_dims: grid.dims,
        occupied_voxels: fits.diagnostics.occupied,
        voxel_planes: fits.diagnostics.fitted,
        skipped_too_few: fits.diagnostics.skipped_too_few,
        skipped_collinear: fits.diagnostics.skipped_collinear,
        regions: segmentation.regions.len(),
        unsegmented_planes: segmentation.unsegmented.len(),
        effective_psi: params.psi,
    };
    let timings = StageTimings {
        read_s: 0.0,
        filter_s,
        voxel_s,
        grow_s,
        planes_s,
        score_s,
        total_s: start.elapsed().as_secs_f64(),
    };
    Ok(PipelineOutput {
        report: RunReport {
            schema_version: SCHEMA_VERSION,
            config: config.clone(),
            timings,
            filter,
            counts,
            regions,
            quality,
        },
        cloud,
        grid,
        planes: fits.planes,
        segmentation,
    })
}

/// Reads the configured input (and truth), runs all stages and writes the
/// outputs when an output directory is set.
pub fn run_pipeline(config: &RunConfig) -> Result<RunReport> {
    let start = Instant::now();
    config.validate()?;
    let (loaded, read_s) = timed(|| load_inputs(config));
    let (cloud, truth) = loaded.stage(Stage::Read)?;
    let mut out = run_on_cloud(&cloud, truth.as_deref(), config)?;
    out.report.timings.read_s = read_s;
    out.report.timings.total_s = start.elapsed().as_secs_f64();
    if let Some(dir) = &config.out_dir {
        write_outputs(&out, dir, config.binary_ply).stage(Stage::Export)?;
    }
    Ok(out.report)
}

fn load_inputs(config: &RunConfig) -> Result<(PointCloud, Option<Vec<GroundTruthSurface>>)> {
    let input = config
        .input
        .as_ref()
        .ok_or_else(|| Error::invalid("no input point cloud given"))?;
    let cloud = read_ply(input)?;
    let truth = config.truth.as_ref().map(read_ground_truth).transpose()?;
    Ok((cloud, truth))
}

// ---------------------------------------------------------------------------
// Exports

pub const UNSEGMENTED_COLOR: Rgb = [128, 128, 128];

/// Distinct, reproducible color for a region id.
pub fn region_color(id: usize) -> Rgb {
    let h = (id as f64 * 0.618_033_988_749_895).fract() * 6.0;
    let (s, v) = (0.75, 0.95);
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let q = |t: f64| ((t + m) * 255.0).round() as u8;
    [q(r), q(g), q(b)]
}

/// The filtered cloud colored by region; points outside any region are gray.
pub fn segmented_cloud(out: &PipelineOutput) -> PointCloud {
    let mut colors = vec![UNSEGMENTED_COLOR; out.cloud.len()];
    for region in &out.segmentation.regions {
        let color = region_color(region.id);
        for &m in &region.members {
            if let Some(idx) = out.grid.occupancy.get(&out.planes[m].voxel_index) {
                for &i in idx {
                    colors[i] = color;
                }
            }
        }
    }
    PointCloud::with_colors(out.cloud.points.clone(), colors).expect("one color per point")
}

/// Region rectangles sampled on a regular `samples x samples` lattice.
pub fn region_plane_overlay(regions: &[RegionSummary], samples: usize) -> PointCloud {
    let n = samples.max(2);
    let mut points = Vec::with_capacity(regions.len() * n * n);
    let mut colors = Vec::with_capacity(points.capacity());
    for r in regions {
        let p = &r.plane;
        let (a, b) = (p.axes.0.into_inner(), p.axes.1.into_inner());
        for i in 0..n {
            for j in 0..n {
                let s = 2.0 * i as f64 / (n - 1) as f64 - 1.0;
                let t = 2.0 * j as f64 / (n - 1) as f64 - 1.0;
                points.push(p.center + a * (s * p.half_extents.0) + b * (t * p.half_extents.1));
                colors.push(region_color(r.id));
            }
        }
    }
    PointCloud::with_colors(points, colors).expect("one color per point")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `report.json`, `summary.txt`, `segmented.ply` and `region_planes.ply`.
pub fn write_outputs(out: &PipelineOutput, dir: &Path, binary: bool) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_text(&dir.join("report.json"), &out.report.to_json()?)?;
    write_text(&dir.join("summary.txt"), &out.report.summary_text())?;
    if !out.cloud.is_empty() {
        write_ply(&segmented_cloud(out), dir.join("segmented.ply"), binary)?;
    }
    if !out.report.regions.is_empty() {
        write_ply(
            &region_plane_overlay(&out.report.regions, 40),
            dir.join("region_planes.ply"),
            binary,
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Sweeps

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepFactor {
    Zeta,
    Theta,
    Psi,
    K,
}

impl SweepFactor {
    pub fn name(self) -> &'static str {
        match self {
            SweepFactor::Zeta => "zeta",
            SweepFactor::Theta => "theta",
            SweepFactor::Psi => "psi",
            SweepFactor::K => "k",
        }
    }

    /// Standard `(start, end, step)` range for this factor.
    pub fn default_range(self) -> (f64, f64, f64) {
        match self {
            SweepFactor::Zeta => (0.01, 0.07, 0.006),
            SweepFactor::Theta => (0.0, 30.0, 3.0),
            SweepFactor::Psi => (0.01, 0.6, 0.06),
            SweepFactor::K => (1.0, 20.0, 2.0),
        }
    }

    pub fn apply(self, base: &RunConfig, value: f64) -> Result<RunConfig> {
        let mut c = base.clone();
        match self {
            SweepFactor::Zeta => c.zeta = value,
            SweepFactor::Theta => c.theta_deg = value,
            SweepFactor::Psi => c.psi = value,
            SweepFactor::K => {
                let k = value.round();
                if !(k >= 1.0) {
                    return Err(Error::invalid(format!("k must be >= 1, got {value}")));
                }
                c.k = k as usize;
            }
        }
        c.validate()?;
        Ok(c)
    }
}

impl FromStr for SweepFactor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "zeta" => Ok(SweepFactor::Zeta),
            "theta" => Ok(SweepFactor::Theta),
            "psi" => Ok(SweepFactor::Psi),
            "k" => Ok(SweepFactor::K),
            other => Err(Error::invalid(format!(
                "unknown sweep factor '{other}' (expected zeta, theta, psi or k)"
            ))),
        }
    }
}

/// `start, start + step, ...` up to `end`. A small tolerance keeps `end`
/// when it is reached up to rounding.
pub fn sweep_values(start: f64, end: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !start.is_finite() || !end.is_finite() {
        return Err(Error::invalid(format!(
            "sweep step must be > 0, got {step}"
        )));
    }
    if end < start {
        return Err(Error::invalid(format!(
            "sweep end {end} is below start {start}"
        )));
    }
    let n = ((end - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| start + i as f64 * step).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub schema_version: u32,
    pub factor: SweepFactor,
    pub value: f64,
    pub status: String,
    pub region_growing_s: Option<f64>,
    pub total_s: Option<f64>,
    pub z_run: Option<f64>,
    pub region_count: Option<usize>,
    pub error: Option<String>,
}

/// One run per value of `factor`, others held at `base`. Timings come from
/// the fastest of `repeats` runs. A failed value becomes a failed row.
#[allow(clippy::too_many_arguments)]
pub fn sweep_on_cloud(
    cloud: &PointCloud,
    truth: Option<&[GroundTruthSurface]>,
    base: &RunConfig,
    factor: SweepFactor,
    start: f64,
    end: f64,
    step: f64,
    repeats: usize,
) -> Result<Vec<SweepRow>> {
    let values = sweep_values(start, end, step)?;
    let mut state: Vec<Result<(RunConfig, Option<SweepCell>)>> = values
        .iter()
        .map(|&v| {
            factor
                .apply(base, v)
                .map(|c| (RunConfig { out_dir: None, ..c }, None))
        })
        .collect();
    // Repeats go round-robin over the values so a transient slowdown is
    // spread across rows instead of landing on one.
    for _ in 0..repeats.max(1) {
        for slot in state.iter_mut() {
            let Ok((config, cell)) = slot else { continue };
            match run_on_cloud(cloud, truth, config) {
                Ok(out) => {
                    let t = &out.report.timings;
                    match cell {
                        Some(c) if c.total_s <= t.total_s => {}
                        Some(c) => {
                            c.grow_s = t.grow_s;
                            c.total_s = t.total_s;
                        }
                        None => {
                            *cell = Some(SweepCell {
                                grow_s: t.grow_s,
                                total_s: t.total_s,
                                report: out.report,
                            })
                        }
                    }
                }
                Err(e) => *slot = Err(e),
            }
        }
    }
    Ok(values
        .into_iter()
        .zip(state)
        .map(|(value, cell)| match cell {
            Ok((_, Some(c))) => SweepRow {
                schema_version: SCHEMA_VERSION,
                factor,
                value,
                status: "ok".into(),
                region_growing_s: Some(c.grow_s),
                total_s: Some(c.total_s),
                z_run: c.report.quality.as_ref().map(|q| q.z_run),
                region_count: Some(c.report.regions.len()),
                error: None,
            },
            Ok((_, None)) => unreachable!("every value runs at least once"),
            Err(e) => SweepRow {
                schema_version: SCHEMA_VERSION,
                factor,
                value,
                status: "failed".into(),
                region_growing_s: None,
                total_s: None,
                z_run: None,
                region_count: None,
                error: Some(e.to_string()),
            },
        })
        .collect())
}

struct SweepCell {
    grow_s: f64,
    total_s: f64,
    /// Report of the first run; everything but timings is identical across repeats.
    report: RunReport,
}

/// Reads the base config's input and truth, then sweeps.
pub fn run_sweep(
    base: &RunConfig,
    factor: SweepFactor,
    start: f64,
    end: f64,
    step: f64,
    repeats: usize,
) -> Result<Vec<SweepRow>> {
    sweep_values(start, end, step)?;
    let (cloud, truth) = load_inputs(base).stage(Stage::Read)?;
    sweep_on_cloud(
        &cloud,
        truth.as_deref(),
        base,
        factor,
        start,
        end,
        step,
        repeats,
    )
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let ser = |e: csv::Error| Error::Serialization(e.to_string());
    w.write_record([
        "schema_version",
        "factor",
        "value",
        "status",
        "region_growing_s",
        "total_s",
        "z_run",
        "region_count",
        "error",
    ])
    .map_err(ser)?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
    for r in rows {
        w.write_record([
            r.schema_version.to_string(),
            r.factor.name().to_string(),
            r.value.to_string(),
            r.status.clone(),
            opt(r.region_growing_s),
            opt(r.total_s),
            opt(r.z_run),
            r.region_count.map_or_else(String::new, |c| c.to_string()),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(ser)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Serialization(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Serialization(e.to_string()))
}
