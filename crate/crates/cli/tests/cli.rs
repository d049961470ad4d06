use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn strikedip(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_strikedip"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth_box(dir: &Path) {
    let out = strikedip(&[
        "synth",
        "--preset",
        "box",
        "--points-per-face",
        "3000",
        "--seed",
        "5",
        "--out-dir",
        path(dir),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn synth_run_score_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    let run_dir = tmp.path().join("run");
    synth_box(&scene);
    for f in ["cloud.ply", "truth.csv", "scene.json"] {
        assert!(scene.join(f).is_file(), "{f}");
    }

    let cloud = scene.join("cloud.ply");
    let truth = scene.join("truth.csv");
    let out = strikedip(&[
        "run",
        "--input",
        path(&cloud),
        "--truth",
        path(&truth),
        "--out-dir",
        path(&run_dir),
        "--binary-ply",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("quality: z_run"));
    for f in [
        "report.json",
        "summary.txt",
        "segmented.ply",
        "region_planes.ply",
    ] {
        assert!(run_dir.join(f).is_file(), "{f}");
    }
    let ply = std::fs::read(run_dir.join("segmented.ply")).unwrap();
    assert!(ply.windows(20).any(|w| w == b"binary_little_endian"));

    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["quality"]["matched"], 6);

    let out = strikedip(&[
        "score",
        "--report",
        path(&run_dir.join("report.json")),
        "--truth",
        path(&truth),
    ]);
    assert!(out.status.success());
    let scored: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(scored["z_run"], report["quality"]["z_run"]);
}

#[test]
fn run_json_matches_between_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    synth_box(tmp.path());
    let cloud = tmp.path().join("cloud.ply");
    let strip = |out: Output| {
        assert!(out.status.success());
        let mut v: Value = serde_json::from_slice(&out.stdout).unwrap();
        v["timings"] = Value::Null;
        v
    };
    let one = strip(strikedip(&[
        "--threads",
        "1",
        "run",
        "--input",
        path(&cloud),
        "--json",
    ]));
    let four = strip(strikedip(&[
        "--threads",
        "4",
        "run",
        "--input",
        path(&cloud),
        "--json",
    ]));
    assert_eq!(one, four);
}

#[test]
fn sweep_writes_versioned_csv() {
    let tmp = tempfile::tempdir().unwrap();
    synth_box(tmp.path());
    let cloud = tmp.path().join("cloud.ply");
    let truth = tmp.path().join("truth.csv");
    let out = strikedip(&[
        "sweep",
        "--input",
        path(&cloud),
        "--truth",
        path(&truth),
        "--factor",
        "theta",
        "--out-dir",
        path(tmp.path()),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(tmp.path().join("sweep_theta.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 12);
    assert!(lines[0].starts_with("schema_version,factor,value,status"));
    assert!(lines[1..].iter().all(|l| l.starts_with("1,theta,")));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    synth_box(tmp.path());
    let cloud = tmp.path().join("cloud.ply");

    let missing = strikedip(&["run", "--input", path(&tmp.path().join("absent.ply"))]);
    assert_eq!(missing.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("[read]"));

    let bad_zeta = strikedip(&["run", "--input", path(&cloud), "--zeta", "1.5"]);
    assert_eq!(bad_zeta.status.code(), Some(2));

    let emptied = strikedip(&["run", "--input", path(&cloud), "--sigma", "1e-9"]);
    assert_eq!(emptied.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&emptied.stderr).contains("[voxel]"));

    let zero_step = strikedip(&[
        "sweep",
        "--input",
        path(&cloud),
        "--factor",
        "k",
        "--step",
        "0",
    ]);
    assert_eq!(zero_step.status.code(), Some(2));

    assert_eq!(
        strikedip(&["sweep", "--input", "x", "--factor", "phi"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(strikedip(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn synth_reads_scene_json() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("walls.json");
    std::fs::write(
        &scene,
        r#"{
  "shape": { "kind": "wall_set", "faces": [
    { "center": [0, 0, 0], "dip_deg": 40, "dipdir_deg": 89, "width": 4, "height": 3 }
  ] },
  "points_per_face": 500,
  "noise_rel": 0.0,
  "outlier_fraction": 0.0,
  "outlier_inflation": 1.0,
  "seed": 2
}"#,
    )
    .unwrap();
    let out_dir = tmp.path().join("out");
    let out = strikedip(&[
        "synth",
        "--scene",
        path(&scene),
        "--out-dir",
        path(&out_dir),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let truth = std::fs::read_to_string(out_dir.join("truth.csv")).unwrap();
    assert_eq!(truth.lines().count(), 2);

    std::fs::write(&scene, "{ not json").unwrap();
    let out = strikedip(&[
        "synth",
        "--scene",
        path(&scene),
        "--out-dir",
        path(&out_dir),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
