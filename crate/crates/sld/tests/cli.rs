//! End-to-end tests of the `sld` binary: batch isolation, dry runs,
//! exit codes, and deterministic synthetic output.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn sld(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sld"))
        .args(["--out", dir.to_str().unwrap()])
        .args(args)
        .env("SLD_LOG", "off")
        .output()
        .expect("failed to spawn sld")
}

fn synth_mesh(dir: &Path) -> PathBuf {
    let out = sld(dir, &["synth", "--seed", "7", "--resolution", "2.0"]);
    assert!(out.status.success(), "synth failed: {out:?}");
    dir.join("synth-7.ply")
}

fn manifest(dir: &Path) -> serde_json::Value {
    let bytes = std::fs::read(dir.join("manifest.json")).expect("manifest.json missing");
    serde_json::from_slice(&bytes).unwrap()
}

#[test]
fn synth_outputs_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth_mesh(a.path());
    synth_mesh(b.path());
    for name in [
        "synth-7.ply",
        "synth-7.landmarks.json",
        "synth-7.annotations.json",
    ] {
        let fa = std::fs::read(a.path().join(name)).unwrap();
        let fb = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(fa, fb, "{name} differs between runs");
    }
}

#[test]
fn detect_batch_continues_past_corrupt_input() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = synth_mesh(dir.path());
    let good_a = dir.path().join("a.ply");
    let good_b = dir.path().join("b.ply");
    let corrupt = dir.path().join("c.ply");
    std::fs::copy(&mesh, &good_a).unwrap();
    std::fs::copy(&mesh, &good_b).unwrap();
    std::fs::write(&corrupt, b"not a mesh at all").unwrap();

    let out_dir = tempfile::tempdir().unwrap();
    let out = sld(
        out_dir.path(),
        &[
            "detect",
            good_a.to_str().unwrap(),
            good_b.to_str().unwrap(),
            corrupt.to_str().unwrap(),
        ],
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "batch with partial failure exits 0"
    );

    let m = manifest(out_dir.path());
    let entries = m["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 3);
    assert_eq!(entries[0]["mesh_id"], "a");
    assert_eq!(entries[0]["ok"], true);
    assert_eq!(entries[1]["ok"], true);
    assert_eq!(entries[2]["mesh_id"], "c");
    assert_eq!(entries[2]["ok"], false);
    let failed = entries[2]["stages"]
        .as_array()
        .unwrap()
        .iter()
        .any(|s| s["outcome"] == "failed" && s["error"].is_string());
    assert!(failed, "corrupt entry records a failed stage with an error");

    assert!(out_dir.path().join("a.landmarks.json").exists());
    assert!(out_dir.path().join("b.landmarks.json").exists());
    assert!(out_dir.path().join("a.labeled.ply").exists());
    assert!(!out_dir.path().join("c.landmarks.json").exists());
}

#[test]
fn detect_dry_run_writes_manifest_only() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = synth_mesh(dir.path());
    let out_dir = tempfile::tempdir().unwrap();
    let out = sld(
        out_dir.path(),
        &["--dry-run", "detect", mesh.to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(0));

    let names: Vec<String> = std::fs::read_dir(out_dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(
        names,
        vec!["manifest.json"],
        "dry run produced extra outputs"
    );
    let m = manifest(out_dir.path());
    assert_eq!(m["entries"].as_array().unwrap().len(), 1);
}

#[test]
fn detect_with_zero_successes_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let corrupt = dir.path().join("broken.stl");
    std::fs::write(&corrupt, b"\0\0garbage").unwrap();
    let out_dir = tempfile::tempdir().unwrap();
    let out = sld(out_dir.path(), &["detect", corrupt.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "total failure must exit 2");
    assert!(out_dir.path().join("manifest.json").exists());
}

#[test]
fn evaluate_strict_flag_controls_missing_group_handling() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = synth_mesh(dir.path());
    let landmarks = dir.path().join("synth-7.landmarks.json");
    let annotations = dir.path().join("synth-7.annotations.json");

    // drop one annotation group so one landmark group has no match
    let mut ann: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&annotations).unwrap()).unwrap();
    let groups = ann["groups"].as_array_mut().unwrap();
    assert!(groups.len() > 1);
    groups.pop();
    let pruned = dir.path().join("pruned.annotations.json");
    std::fs::write(&pruned, serde_json::to_vec_pretty(&ann).unwrap()).unwrap();

    let args_tail = [
        "--landmarks",
        landmarks.to_str().unwrap(),
        "--annotations",
        pruned.to_str().unwrap(),
        "--meshes",
        mesh.to_str().unwrap(),
    ];

    let out_dir = tempfile::tempdir().unwrap();
    let lenient = sld(
        out_dir.path(),
        &[&["evaluate"][..], &args_tail[..]].concat(),
    );
    assert_eq!(lenient.status.code(), Some(0), "lenient evaluate succeeds");
    assert!(out_dir.path().join("report.csv").exists());
    assert!(out_dir.path().join("report.md").exists());

    let strict = sld(
        out_dir.path(),
        &[&["--strict", "evaluate"][..], &args_tail[..]].concat(),
    );
    assert_eq!(strict.status.code(), Some(2), "strict evaluate exits 2");
}

#[test]
fn synth_rejects_invalid_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let out = sld(dir.path(), &["synth", "--resolution", "0.0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth_no_spinous_drops_midline_groups() {
    let dir = tempfile::tempdir().unwrap();
    let out = sld(dir.path(), &["synth", "--seed", "3", "--no-spinous"]);
    assert_eq!(out.status.code(), Some(0));
    let lm: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("synth-3.landmarks.json")).unwrap())
            .unwrap();
    let kinds: Vec<&str> = lm["groups"]
        .as_array()
        .unwrap()
        .iter()
        .map(|g| g["kind"].as_str().unwrap())
        .collect();
    assert!(!kinds.contains(&"SSL"), "SSL requires a spinous process");
    assert!(!kinds.contains(&"ISL"), "ISL requires a spinous process");
    assert!(kinds.contains(&"ALL"));
}
