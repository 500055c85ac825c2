use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hyperband(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hyperband"))
        .args(args)
        .env("HYPERBAND_OUT", root)
        .output()
        .expect("spawn hyperband")
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("exp.ini");
    fs::write(&p, body).unwrap();
    p.display().to_string()
}

const PLANCHEREL: &str = "[experiment]\nscenario = plancherel\nseeds = 1,2\n";

#[test]
fn run_writes_manifest_csv_and_plot_script() {
    let root = tempfile::tempdir().unwrap();
    let cfg = write_config(root.path(), PLANCHEREL);
    let out = hyperband(root.path(), &["run", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = root.path().join("plancherel");
    let manifest = fs::read_to_string(dir.join("manifest.ini")).unwrap();
    assert!(manifest.contains("plancherel_scale="));
    assert!(manifest.contains("version="));
    assert!(manifest.contains("[tolerances]") && manifest.contains("plancherel=1e-4"));
    assert!(fs::read_to_string(dir.join("plancherel.csv")).unwrap().starts_with("seed,"));
    assert!(fs::read_to_string(dir.join("plot.py")).unwrap().contains("plancherel.csv"));
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let body = "[experiment]\nscenario = spherical_avg\n[parameters]\ncases = 4\n";
    for root in [&a, &b] {
        let cfg = write_config(root.path(), body);
        assert_eq!(hyperband(root.path(), &["run", &cfg]).status.code(), Some(0));
    }
    for name in ["manifest.ini", "two_path.csv", "near_identity.csv", "contraction.csv", "plot.py"] {
        let x = fs::read(a.path().join("spherical_avg").join(name)).unwrap();
        let y = fs::read(b.path().join("spherical_avg").join(name)).unwrap();
        assert_eq!(x, y, "{name}");
    }
}

#[test]
fn config_errors_exit_with_two() {
    let root = tempfile::tempdir().unwrap();
    let cfg = write_config(root.path(), PLANCHEREL);
    for args in [
        vec!["run", "/nonexistent/config.ini"],
        vec!["run", cfg.as_str(), "--override", "omega=-2"],
        vec!["run", cfg.as_str(), "--override", "no_such_key=1"],
    ] {
        let out = hyperband(root.path(), &args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("config error"));
    }
    let bad = write_config(root.path(), "[experiment]\nscenario = plancherel\n[parameters]\nomega = two\n");
    assert_eq!(hyperband(root.path(), &["run", &bad]).status.code(), Some(2));
}

#[test]
fn failed_invariant_exits_with_one_and_names_it() {
    let root = tempfile::tempdir().unwrap();
    let cfg = write_config(root.path(), PLANCHEREL);
    let out = hyperband(root.path(), &["run", &cfg, "--override", "tolerances.plancherel=1e-15"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("plancherel_identity"));
    let manifest = fs::read_to_string(root.path().join("plancherel/manifest.ini")).unwrap();
    assert!(manifest.contains("first_failure=plancherel_identity"));
}

#[test]
fn inadmissible_radius_is_reported_not_fatal() {
    let root = tempfile::tempdir().unwrap();
    let cfg = write_config(
        root.path(),
        "[experiment]\nscenario = averaged_reconstruct\n[parameters]\nr = 0.4\ndomain_radius = 1.0\ntau = 0.6\nk_schedule =\n",
    );
    let out = hyperband(root.path(), &["run", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(root.path().join("averaged_reconstruct/averaged.csv")).unwrap();
    let row = csv.lines().nth(1).unwrap();
    assert_eq!(row.split(',').nth(7), Some("false"), "{row}");
}

#[test]
fn verify_detects_perturbed_plancherel_constant() {
    let root = tempfile::tempdir().unwrap();
    let ok = hyperband(root.path(), &["verify", "--scenarios", "plancherel"]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("PASS"));
    let bad = hyperband(root.path(), &["verify", "--scenarios", "plancherel", "--scale-factor", "1.01"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("plancherel_identity"));
}

#[test]
fn verify_with_no_scenarios_passes_with_warning() {
    let root = tempfile::tempdir().unwrap();
    let out = hyperband(root.path(), &["verify", "--scenarios", ""]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
}

#[test]
fn calibrate_reports_scale() {
    let root = tempfile::tempdir().unwrap();
    let out = hyperband(root.path(), &["calibrate"]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let line = stdout.lines().find(|l| l.starts_with("plancherel_scale")).unwrap();
    let v: f64 = line.split('=').nth(1).unwrap().trim().parse().unwrap();
    assert!((v * 2.0 * std::f64::consts::PI - 1.0).abs() < 1e-4, "{v}");
    assert!(root.path().join("calibrate/calibration.csv").exists());
}
