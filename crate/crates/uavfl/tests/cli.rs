use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use uavfl::manifest::{RunManifest, MANIFEST};
use uavfl::output::{read_rows, PointRow, SummaryCsvRow, TraceCsvRow, ZetaRow};

const TINY: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/tiny.toml");

fn uavfl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uavfl")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = uavfl(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn dir_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p: PathBuf| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST)).unwrap()).unwrap()
}

#[test]
fn optimize_writes_trajectory_weights_trace_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("a");
    ok(&["optimize", "--config", TINY, "--out", dir_str(&out)]);

    let traj: Vec<PointRow> = read_rows(&out.join("trajectory.csv")).unwrap();
    assert_eq!(traj.len(), 25);
    assert_eq!((traj[0].x, traj[0].y), (250.0, 0.0));
    assert_eq!((traj[24].x, traj[24].y), (250.0, 0.0));
    let zeta: Vec<ZetaRow> = read_rows(&out.join("zeta.csv")).unwrap();
    assert_eq!(zeta.len(), 24);
    let trace: Vec<TraceCsvRow> = read_rows(&out.join("trace.csv")).unwrap();
    assert!(trace.windows(2).all(|w| w[1].objective <= w[0].objective));

    let m = manifest(&out);
    assert_eq!(m.subcommand, "optimize");
    assert_eq!(m.seeds.seed, 5);
    let copy = fs::read_to_string(out.join("config.toml")).unwrap();
    assert_eq!(m.config_sha256, uavfl::manifest::config_digest(&copy));
}

#[test]
fn manifest_reruns_the_experiment() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&["simulate", "--config", TINY, "--out", dir_str(&a), "--schemes", "error-free,circular", "--seed", "9"]);
    // Rerun from the resolved copy alone.
    let copy = a.join("config.toml");
    ok(&["simulate", "--config", dir_str(&copy), "--out", dir_str(&b)]);
    assert_eq!(csv_files(&a), csv_files(&b));
    assert_eq!(manifest(&a).config_sha256, manifest(&b).config_sha256);
}

#[test]
fn seed_override_changes_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&["simulate", "--config", TINY, "--out", dir_str(&a), "--schemes", "error-free", "--seed", "1"]);
    ok(&["simulate", "--config", TINY, "--out", dir_str(&b), "--schemes", "error-free", "--seed", "2"]);
    assert_ne!(csv_files(&a), csv_files(&b));
    assert_ne!(manifest(&a).config_sha256, manifest(&b).config_sha256);
}

#[test]
fn zero_rounds_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = uavfl(&[
        "simulate",
        "--config",
        TINY,
        "--out",
        dir_str(tmp.path()),
        "--schemes",
        "error-free,optimized",
        "--rounds",
        "0",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning.rounds"));
}

#[test]
fn bad_invocations_exit_nonzero() {
    assert!(!uavfl(&["fly", "--out", "x"]).status.success());

    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "").unwrap();
    let out = uavfl(&["optimize", "--config", TINY, "--out", dir_str(&blocker.join("sub"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("output directory"));

    let out = uavfl(&["optimize", "--config", "/nonexistent.toml", "--out", dir_str(tmp.path())]);
    assert!(!out.status.success());

    let out = uavfl(&["simulate", "--config", TINY, "--out", dir_str(tmp.path()), "--schemes", "ground"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("ground"));
}

#[test]
fn invalid_config_is_reported_verbatim() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    fs::write(&path, fs::read_to_string(TINY).unwrap().replace("slots = 24", "slots = 24\ncoverage_radius = -1.0")).unwrap();
    let out = uavfl(&["baseline", "--config", dir_str(&path), "--out", dir_str(tmp.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("uav.coverage_radius"));
}

#[test]
fn plot_data_only_reshapes_earlier_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    let opt = tmp.path().join("opt");
    ok(&["simulate", "--config", TINY, "--out", dir_str(&sim)]);
    ok(&["optimize", "--config", TINY, "--out", dir_str(&opt)]);
    ok(&["baseline", "--config", TINY, "--out", dir_str(&opt)]);

    let p1 = tmp.path().join("p1");
    let p2 = tmp.path().join("p2");
    let args = |p: &Path| {
        vec![
            "plot-data".to_string(),
            "--config".into(),
            TINY.into(),
            "--out".into(),
            p.display().to_string(),
            "--from".into(),
            sim.display().to_string(),
            "--from".into(),
            opt.display().to_string(),
        ]
    };
    ok(&args(&p1).iter().map(String::as_str).collect::<Vec<_>>());
    ok(&args(&p2).iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(csv_files(&p1), csv_files(&p2));

    let summary: Vec<SummaryCsvRow> = read_rows(&sim.join("summary.csv")).unwrap();
    let curves = fs::read_to_string(p1.join("accuracy_curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), summary.len() + 1);
    let map = fs::read_to_string(p1.join("trajectory_map.csv")).unwrap();
    for series in ["devices", "optimized", "circular", "static-ps"] {
        assert!(map.lines().any(|l| l.split(',').nth(1) == Some(series)), "missing {series}");
    }

    // Removing a source's outputs changes the tables: nothing is recomputed.
    fs::remove_file(opt.join("trajectory.csv")).unwrap();
    let p3 = tmp.path().join("p3");
    ok(&args(&p3).iter().map(String::as_str).collect::<Vec<_>>());
    let map3 = fs::read_to_string(p3.join("trajectory_map.csv")).unwrap();
    assert!(!map3.lines().any(|l| l.split(',').nth(1) == Some("optimized")));

    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let out = uavfl(&["plot-data", "--out", dir_str(&tmp.path().join("p4")), "--from", dir_str(&empty)]);
    assert!(!out.status.success());
}

#[test]
fn csv_outputs_use_lf_line_endings_and_headers() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["baseline", "--config", TINY, "--out", dir_str(tmp.path())]);
    for (name, bytes) in csv_files(tmp.path()) {
        let text = String::from_utf8(bytes).unwrap();
        assert!(!text.contains('\r'), "{name}");
        assert!(text.lines().next().unwrap().chars().all(|c| c.is_ascii_lowercase() || c == '_' || c == ','), "{name}");
    }
}
