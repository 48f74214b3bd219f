//! End-to-end pipeline tests through the compiled binary.

use std::fs;
use std::path::Path;
use std::process::Command;

fn lql() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lql"))
}

fn fast_config() -> &'static str {
    "grid_n = 335\n\
     spacing = 0.06\n\
     k = 2\n\
     i_min = 0\n\
     i_max = 1\n\
     n_replicates = 3\n\
     base_seed = 11\n\
     mesh_resolution = 7\n\
     n_quad = 8\n\
     n_empirical = 4\n"
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("experiment.cfg");
    fs::write(&path, text).unwrap();
    path
}

fn run_stage(stage: &str, cfg: &Path, out: &Path) -> std::process::Output {
    lql()
        .args([
            stage,
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .env("LQL_WORKERS", "2")
        .output()
        .unwrap()
}

#[test]
fn full_pipeline_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), fast_config());
    let out = dir.path().join("run");

    for stage in ["sample", "geodesic", "decompose", "empirical", "diagnose"] {
        let res = run_stage(stage, &cfg, &out);
        assert!(
            res.status.success(),
            "stage {stage} failed: {}",
            String::from_utf8_lossy(&res.stderr)
        );
    }
    // Files exist per contract.
    assert!(out.join("field_0000.lqgf").exists());
    assert!(out.join("records_0000.json").exists());
    assert!(out.join("diagnostics.json").exists());
    assert!(out.join("manifest.json").exists());

    // Manifest lists every emitted file with a checksum.
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let entries = manifest["entries"].as_array().unwrap();
    assert!(!entries.is_empty());
    for e in entries {
        let file = e["file"].as_str().unwrap();
        assert!(out.join(file).exists(), "manifest lists missing file {file}");
        assert_eq!(e["sha256"].as_str().unwrap().len(), 64);
    }

    // Report renders, emits one CSV row per entry, and exits 0/1 by outcome.
    let res = lql()
        .args(["report", "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    let code = res.status.code().unwrap();
    assert!(code == 0 || code == 1, "unexpected report exit {code}");
    let diagnostics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("diagnostics.json")).unwrap()).unwrap();
    let n_entries = diagnostics["entries"].as_array().unwrap().len();
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), n_entries + 1, "summary rows vs entries");
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.contains("statistic"));
}

#[test]
fn sample_stage_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "grid_n = 129\nspacing = 0.06\ni_max = 0\nn_replicates = 2\nbase_seed = 5\n",
    );
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    assert!(run_stage("sample", &cfg, &out_a).status.success());
    assert!(run_stage("sample", &cfg, &out_b).status.success());
    for name in ["field_0000.lqgf", "field_0001.lqgf", "manifest.json"] {
        let a = fs::read(out_a.join(name)).unwrap();
        let b = fs::read(out_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "no_such_key = 1\n");
    let res = run_stage("sample", &cfg, &dir.path().join("run"));
    assert_eq!(res.status.code(), Some(2));
    let cfg = write_config(dir.path(), "gamma = 9.0\n");
    let res = run_stage("sample", &cfg, &dir.path().join("run2"));
    assert_eq!(res.status.code(), Some(2));
    let cfg = write_config(dir.path(), "delta = 1.5\n");
    let res = run_stage("sample", &cfg, &dir.path().join("run3"));
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn empty_renewal_exits_3() {
    // Plain GFF (tilt disabled): the probe coalescence event does not occur
    // at this size, so the geodesic stage reports empty renewal.
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "grid_n = 129\nspacing = 0.25\nk = 4\ni_max = 0\nn_replicates = 2\nbase_seed = 3\n\
         tilt_barrier = 0\ntilt_gate_depth = 0\n",
    );
    let out = dir.path().join("run");
    assert!(run_stage("sample", &cfg, &out).status.success());
    let res = run_stage("geodesic", &cfg, &out);
    assert_eq!(res.status.code(), Some(3));
    // Partial failures are listed in the manifest and the run continues to
    // record per-replicate statuses.
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let statuses = manifest["replicates"].as_array().unwrap();
    assert!(statuses
        .iter()
        .any(|s| s["stage"] == "geodesic" && s["status"].as_str().unwrap() != "ok"));
}

#[test]
fn report_without_diagnose_names_missing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let res = lql()
        .args(["report", "--out", dir.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert_ne!(res.status.code(), Some(0));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("diagnose"), "error does not name the stage: {err}");
}

#[test]
fn replicate_and_seed_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "grid_n = 129\nspacing = 0.06\ni_max = 0\nn_replicates = 1\n",
    );
    let out = dir.path().join("run");
    let res = lql()
        .args([
            "sample",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--replicates",
            "3",
            "--seed",
            "99",
        ])
        .output()
        .unwrap();
    assert!(res.status.success());
    assert!(out.join("field_0002.lqgf").exists());
}
