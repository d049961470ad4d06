use std::collections::BTreeMap;

use strikedip::cloud_io::{read_ply, write_ground_truth, write_ply};
use strikedip::pipeline::{region_color, sweep_csv, UNSEGMENTED_COLOR};
use strikedip::synth::{generate_synthetic, SceneShape, SyntheticScene};
use strikedip::{run_pipeline, run_sweep, RunConfig, RunReport, SweepFactor};

fn prism_scene() -> SyntheticScene {
    SyntheticScene {
        shape: SceneShape::Prism {
            sides: 5,
            circumradius: 3.0,
            height: 4.0,
            capped: true,
            tilt_deg: 8.0,
            yaw_deg: 17.0,
        },
        points_per_face: 4_000,
        noise_rel: 0.002,
        outlier_fraction: 0.01,
        outlier_inflation: 2.0,
        seed: 9,
    }
}

fn config_for(dir: &std::path::Path, binary: bool) -> RunConfig {
    let syn = generate_synthetic(&prism_scene()).unwrap();
    let input = dir.join("cloud.ply");
    let truth = dir.join("truth.csv");
    write_ply(&syn.cloud, &input, binary).unwrap();
    write_ground_truth(&syn.truth, &truth).unwrap();
    RunConfig {
        input: Some(input),
        truth: Some(truth),
        out_dir: Some(dir.join("out")),
        binary_ply: binary,
        ..RunConfig::default()
    }
}

#[test]
fn prism_from_files_recovers_every_face() {
    let tmp = tempfile::tempdir().unwrap();
    let config = config_for(tmp.path(), false);
    let report = run_pipeline(&config).unwrap();
    let q = report.quality.as_ref().unwrap();
    assert_eq!(q.matched, 7, "{}", report.summary_text());
    assert!(q.z_run <= 0.05, "{}", q.z_run);
    assert!(report.timings.read_s > 0.0);
    assert!(report.timings.total_s >= report.timings.read_s + report.timings.grow_s);

    let saved = std::fs::read_to_string(tmp.path().join("out/report.json")).unwrap();
    let back = RunReport::from_json(&saved).unwrap();
    assert_eq!(
        back.deterministic_json().unwrap(),
        report.deterministic_json().unwrap()
    );
}

#[test]
fn segmented_export_colors_match_region_sizes() {
    let tmp = tempfile::tempdir().unwrap();
    let config = config_for(tmp.path(), true);
    let report = run_pipeline(&config).unwrap();

    let seg = read_ply(tmp.path().join("out/segmented.ply")).unwrap();
    assert_eq!(seg.len(), report.counts.kept_points);
    let mut by_color: BTreeMap<[u8; 3], usize> = BTreeMap::new();
    for c in seg.colors.as_ref().unwrap() {
        *by_color.entry(*c).or_default() += 1;
    }
    for r in &report.regions {
        assert_eq!(
            by_color.get(&region_color(r.id)),
            Some(&r.points),
            "region {}",
            r.id
        );
    }
    let in_regions: usize = report.regions.iter().map(|r| r.points).sum();
    let gray = by_color.get(&UNSEGMENTED_COLOR).copied().unwrap_or(0);
    assert_eq!(in_regions + gray, seg.len());

    let overlay = read_ply(tmp.path().join("out/region_planes.ply")).unwrap();
    assert_eq!(overlay.len(), report.regions.len() * 40 * 40);
    for r in &report.regions {
        let p = &r.plane;
        let n = p.normal.into_inner();
        let mine = overlay
            .points
            .iter()
            .zip(overlay.colors.as_ref().unwrap())
            .filter(|(_, c)| **c == region_color(r.id));
        for (q, _) in mine {
            assert!((q - p.center).dot(&n).abs() < 1e-9);
        }
    }
}

#[test]
fn k_sweep_from_files() {
    let tmp = tempfile::tempdir().unwrap();
    let config = config_for(tmp.path(), false);
    let rows = run_sweep(&config, SweepFactor::K, 1.0, 20.0, 2.0, 1).unwrap();
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().all(|r| r.status == "ok"));
    assert_eq!(rows[0].value, 1.0);
    assert_eq!(rows[9].value, 19.0);
    // Sweeps never write run outputs.
    assert!(!tmp.path().join("out").exists());
    let csv = sweep_csv(&rows).unwrap();
    assert_eq!(csv.lines().count(), 11);
}

#[test]
fn missing_truth_file_is_a_read_error() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = config_for(tmp.path(), false);
    config.truth = Some(tmp.path().join("nope.csv"));
    let err = run_pipeline(&config).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().starts_with("[read]"));
}
