use std::path::Path;
use std::process::{Command, Output};

use invasion_fct::io::output::read_csv_grid;

fn cli(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_invasion-fct"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .env_remove("INVASION_FCT_OUTPUT_ROOT")
        .output()
        .unwrap()
}

#[test]
fn runs_a_config_file_with_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let config =
        "refinements = 2\nfinal_time = 0.5\nsnapshot_times = [0.0, 0.25]\noutput_dir = \"run\"\n";
    std::fs::write(tmp.path().join("small.toml"), config).unwrap();
    let out = cli(
        &[
            "run",
            "small.toml",
            "--scheme",
            "low_order",
            "--tau",
            "0.05",
        ],
        tmp.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("10 steps"), "{stdout}");

    let dir = tmp.path().join("run");
    let grid = read_csv_grid(&dir.join("t0.25.csv")).unwrap();
    assert_eq!(grid.points.len(), 25);
    assert!(grid.u.iter().all(|&u| u >= 0.0));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["status"], "completed");
    assert_eq!(summary["steps"], 10);
    let manifest = std::fs::read_to_string(dir.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"low_order\""));
}

#[test]
fn rejects_invalid_configuration() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bad.toml"), "theta = 1.5\n").unwrap();
    let out = cli(&["run", "bad.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("theta"));

    let out = cli(&["run", "--preset", "fig42"], tmp.path());
    assert!(!out.status.success());
    assert!(!tmp.path().join("output").exists());
}

#[test]
fn failed_run_exits_non_zero_and_keeps_its_record() {
    let tmp = tempfile::tempdir().unwrap();
    let config =
        "scheme = \"galerkin\"\nrefinements = 2\nfinal_time = 1.0\nblowup_threshold = 0.5\n";
    std::fs::write(tmp.path().join("g.toml"), config).unwrap();
    let out = cli(&["run", "g.toml", "--out", "g"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAILED"));
    let summary = std::fs::read_to_string(tmp.path().join("g/summary.json")).unwrap();
    assert!(summary.contains("\"failed\""));
}

#[test]
fn show_resolves_presets() {
    let tmp = tempfile::tempdir().unwrap();
    let out = cli(&["show", "--preset", "fig16"], tmp.path());
    assert!(out.status.success());
    let m: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(m["scheme"]["theta"], 1.0);
    assert_eq!(m["scheme"]["mu"], 1e-4);
    assert_eq!(m["output_dir"], "output/fig16");
}
