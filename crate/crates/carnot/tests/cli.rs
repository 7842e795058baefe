//! End-to-end tests of the command-line contract: exit codes, artifact
//! files, and the determinism guarantee, all through the real binary.

use std::path::Path;
use std::process::{Command, Output};

fn carnot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_carnot"))
        .args(args)
        .output()
        .expect("binary should spawn")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no signal exits expected")
}

#[test]
fn validate_prints_the_group_summary() {
    let out = carnot(&["validate"]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("Q = 4"), "missing homogeneous dimension: {text}");
    assert!(text.contains("m = 2"), "missing horizontal rank: {text}");
    assert!(text.contains("s = 2"), "missing step: {text}");
    assert!(text.contains("config sha256:"), "missing provenance hash: {text}");
}

#[test]
fn abelian_plane_is_rejected_with_the_dimension_rule() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("ab2.toml");
    std::fs::write(&cfg, "[group]\npreset = \"abelian-2\"\nmetric = \"box\"\n").unwrap();
    let out = carnot(&["--config", cfg.to_str().unwrap(), "validate"]);
    assert_eq!(exit_code(&out), 3);
    assert!(stderr(&out).contains("Q ≥ 3 required"), "stderr: {}", stderr(&out));
}

#[test]
fn schema_violations_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    for (name, doc) in [
        ("unknown_key.toml", "[group]\npresett = \"heisenberg-1\"\n"),
        ("bad_range.toml", "[quadrature]\ntheta = 0.9\n"),
        ("not_toml.toml", "group = [unterminated\n"),
    ] {
        let cfg = dir.path().join(name);
        std::fs::write(&cfg, doc).unwrap();
        let out = carnot(&["--config", cfg.to_str().unwrap(), "validate"]);
        assert_eq!(exit_code(&out), 2, "{name} should be a schema failure: {}", stderr(&out));
    }
    let out = carnot(&["--config", "/nonexistent/config.toml", "validate"]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn unknown_presets_exit_with_the_algebra_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("mystery.toml");
    std::fs::write(&cfg, "[group]\npreset = \"octonionic\"\n").unwrap();
    let out = carnot(&["--config", cfg.to_str().unwrap(), "validate"]);
    assert_eq!(exit_code(&out), 3);
}

#[test]
fn downstream_commands_guard_on_missing_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("empty");
    for cmd in ["certify", "scan-ad", "semmes", "compop", "export"] {
        let out = carnot(&["--out", out_dir.to_str().unwrap(), cmd]);
        assert_eq!(exit_code(&out), 6, "{cmd} must refuse without artifacts: {}", stderr(&out));
    }
}

#[test]
fn certify_refuses_a_failed_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path();
    construct(out_dir);
    // Sabotage the persisted certificate: flip the verdict. The guard must
    // refuse before touching any kernel machinery.
    let cert_path = out_dir.join("certificate.json");
    let text = std::fs::read_to_string(&cert_path).unwrap();
    let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
    value["payload"]["certificate"]["certified"] = serde_json::Value::Bool(false);
    std::fs::write(&cert_path, serde_json::to_string(&value).unwrap()).unwrap();

    let out = carnot(&["--out", out_dir.to_str().unwrap(), "certify"]);
    assert_eq!(exit_code(&out), 6, "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("failed certification"), "stderr: {}", stderr(&out));
}

fn construct(out_dir: &Path) {
    let out = carnot(&["--out", out_dir.to_str().unwrap(), "construct"]);
    assert_eq!(exit_code(&out), 0, "construct failed: {}", stderr(&out));
    assert!(out_dir.join("system.json").is_file());
    assert!(out_dir.join("certificate.json").is_file());
    assert!(out_dir.join("cloud.cnlb").is_file());
}

#[test]
fn construct_then_certify_is_byte_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (out_dir, workers) in [(&a, "1"), (&b, "4")] {
        let path = out_dir.to_str().unwrap();
        let out = carnot(&["--out", path, "--workers", workers, "--deterministic", "on", "construct"]);
        assert_eq!(exit_code(&out), 0, "construct failed: {}", stderr(&out));
        let out = carnot(&["--out", path, "--workers", workers, "--deterministic", "on", "certify"]);
        assert_eq!(exit_code(&out), 0, "certify failed: {}", stderr(&out));
    }
    for name in ["system.json", "certificate.json", "certify.json", "cloud.cnlb", "ladder.csv"] {
        let left = std::fs::read(a.join(name)).unwrap();
        let right = std::fs::read(b.join(name)).unwrap();
        assert_eq!(left, right, "{name} differs between worker counts");
    }
}

#[test]
fn pipeline_emits_reports_and_export_roundtrips() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path();
    let path = out_dir.to_str().unwrap();
    construct(out_dir);

    let out = carnot(&["--out", path, "certify"]);
    assert_eq!(exit_code(&out), 0, "certify: {}", stderr(&out));
    assert!(stdout(&out).contains("sign certified positive"), "stdout: {}", stdout(&out));

    for (cmd, artifact) in
        [("scan-ad", "scan_ad.json"), ("semmes", "semmes.json"), ("compop", "compop.json")]
    {
        let out = carnot(&["--out", path, cmd]);
        assert_eq!(exit_code(&out), 0, "{cmd}: {}", stderr(&out));
        let text = std::fs::read_to_string(out_dir.join(artifact)).unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(value["provenance"]["config_sha256"].is_string(), "{artifact} lacks provenance");
        assert_eq!(value["provenance"]["seed"], 7, "{artifact} lacks the seed");
    }

    let out = carnot(&["--out", path, "--depth", "2", "export"]);
    assert_eq!(exit_code(&out), 0, "export: {}", stderr(&out));
    let (dim, rows) = carnot_lib_read(out_dir.join("export.cnlb").as_path());
    assert_eq!(dim, 3);
    // 13 letters (12 coset pieces + the dilation) at depth 2.
    assert_eq!(rows.len(), 13 * 13);
    let csv = std::fs::read_to_string(out_dir.join("export.csv")).unwrap();
    assert_eq!(csv.lines().count(), 13 * 13 + 1);
}

fn carnot_lib_read(path: &Path) -> (usize, Vec<Vec<f64>>) {
    carnot::report::read_point_cloud(path).expect("export must be a readable cloud")
}
