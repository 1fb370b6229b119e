use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fieldgen::controllers::ControllerSpec;
use fieldgen::synthetic::World;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fieldgen"))
        .current_dir(dir)
        .args(args)
        .env("FIELDGEN_JOBS", "1")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Channel walls stiff enough that the clamp measures the full lateral force.
const STIFF: &str = "schema_version = 1\n\n[channel]\nhalf_width_m = 1e-7\nstiffness_n_per_m = 1e6\ndamping_ns_per_m = 1000.0\n";

fn data_lines(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

#[test]
fn simulate_analyze_fit_plot() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("stiff.toml"), STIFF).unwrap();
    let cfg = ["--config", "stiff.toml", "--out", "out"];

    ok(d, &[&cfg[..], &["simulate", "--group", "90", "--seed", "4", "--model", "standard"]].concat());
    let out = d.join("out");
    let trials = data_lines(&out.join("trials_g090.csv"));
    assert_eq!(trials.len(), 549, "header + 548 trials");
    assert!(out.join("schedule_g090.csv").exists());
    assert!(out.join("manifest_simulate.json").exists());

    ok(d, &[&cfg[..], &["analyze"]].concat());
    let rows = data_lines(&out.join("curves.csv"));
    let col = |name: &str| rows[0].iter().position(|h| h == name).unwrap();
    let (kind, corrected, dir_c, mean) = (col("kind"), col("baseline_corrected"), col("direction_deg"), col("mean"));
    let world = World::standard_default();
    let ControllerSpec::Standard { representation } = world.group(90.0).unwrap().adapted() else {
        unreachable!()
    };
    let intra: Vec<_> = rows[1..]
        .iter()
        .filter(|r| r[kind] == "intra" && r[corrected] == "false")
        .collect();
    assert!(!intra.is_empty());
    for r in intra {
        let direction: f64 = r[dir_c].parse().unwrap();
        let got: f64 = r[mean].parse().unwrap();
        let want = representation.gain_fraction(direction);
        assert!((got - want).abs() < 0.03, "{direction} deg: {got} vs {want}");
    }

    ok(d, &[&cfg[..], &["fit", "--model", "standard"]].concat());
    let fit: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("fit_standard_post.json")).unwrap()).unwrap();
    assert_eq!(fit["k"], 3);

    ok(d, &[&cfg[..], &["plot"]].concat());
    let first: Vec<_> = fs::read_dir(out.join("plots")).unwrap().map(|e| e.unwrap().path()).collect();
    assert!(!first.is_empty());
    let before: Vec<Vec<u8>> = first.iter().map(|p| fs::read(p).unwrap()).collect();
    ok(d, &[&cfg[..], &["plot"]].concat());
    let after: Vec<Vec<u8>> = first.iter().map(|p| fs::read(p).unwrap()).collect();
    assert_eq!(before, after);
}

#[test]
fn audit_reports_no_violations() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(dir.path(), &["--out", "out", "audit", "--group", "135", "--seed", "9"]);
    assert!(stdout.contains("0 violations"), "{stdout}");
}

#[test]
fn analyze_of_empty_directory_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("out")).unwrap();
    let out = run(dir.path(), &["--out", "out", "analyze"]);
    assert!(!out.status.success());
    assert_eq!(fs::read_dir(dir.path().join("out")).unwrap().count(), 0);
    let err = String::from_utf8_lossy(&out.stderr);
    let v: serde_json::Value = serde_json::from_str(err.lines().last().unwrap()).unwrap();
    assert!(v["error"]["kind"].is_string());
}

#[test]
fn bad_config_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "schema_version = 1\n[arm]\nmass = 3\n").unwrap();
    let out = run(dir.path(), &["--config", "bad.toml", "audit", "--group", "0"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    let v: serde_json::Value = serde_json::from_str(err.lines().last().unwrap()).unwrap();
    assert_eq!(v["error"]["kind"], "config");
    assert!(v["error"]["message"].as_str().unwrap().contains("mass"));
}
