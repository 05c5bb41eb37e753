//! End-to-end runs of the binary on small configs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stockloan"))
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, body).unwrap();
    path
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("stockloan-cli-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

/// Small grids keep the end-to-end runs fast.
const CASE0: &str = r#"
[model]
a = 0.12
b = 0.09
gamma = 0.07
r = 0.02
K = 100.0
T = 1.0

[grid]
nx = 96
npi = 21
nt = 64

[solver]
eps = []

[mc]
paths = 2000
dates = 8
seed = 7
"#;

const CASE2: &str = r#"
[model]
a = 0.15
b = 0.06
gamma = 0.10
r = 0.02
K = 100.0
T = 1.0

[grid]
nx = 128
npi = 41
nt = 96

[solver]
eps = []

[mc]
paths = 2000
dates = 8
seed = 7
"#;

fn run_ok(args: &[&str], config: &Path, out: &Path) -> Output {
    let output = bin()
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out-dir")
        .arg(out)
        .output()
        .expect("binary runs");
    assert!(
        output.status.success(),
        "command {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

#[test]
fn classify_prints_the_case_and_constraints() {
    let dir = tmp_dir("classify");
    let config = write_config(&dir, CASE0);
    let output = run_ok(&["classify"], &config, &dir);
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("case=Case0 high_bull="), "{stdout}");
    assert!(stdout.contains("RedeemEmpty"), "{stdout}");
    // One output file with the config hash embedded.
    let file = fs::read_dir(&dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .find(|e| e.file_name().to_string_lossy().starts_with("classify-"))
        .expect("classify output written");
    let text = fs::read_to_string(file.path()).unwrap();
    assert!(text.starts_with("# config="), "{text}");
    assert!(text.contains("version="));
}

#[test]
fn bad_config_exits_one_and_solver_misuse_exits_two() {
    let dir = tmp_dir("badcfg");
    let config = write_config(
        &dir,
        "[model]\na = 0.05\nb = 0.05\ngamma = 0.08\nr = 0.03\nK = 100.0\nT = 1.0\n",
    );
    let output = bin()
        .args(["classify", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));

    // A pathological drift spread trips the stability cap in the 2-D solver.
    let stability = CASE2
        .replace("a = 0.15", "a = 3.5")
        .replace("nt = 96", "nt = 16")
        .replace("nx = 128", "nx = 512")
        .replace("npi = 41", "npi = 201");
    let config = write_config(&dir, &stability);
    let output = bin()
        .args(["solve2d", "--config"])
        .arg(&config)
        .arg("--out-dir")
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(
        output.status.code(),
        Some(2),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
}

#[test]
fn overrides_win_over_file_values() {
    let dir = tmp_dir("override");
    let config = write_config(&dir, CASE0);
    // Case0 flips to Case2 when the bear drift drops below the loan rate.
    let output = bin()
        .args(["classify", "-O", "model.b=0.05", "--config"])
        .arg(&config)
        .arg("--out-dir")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("case=Case2"), "{stdout}");
}

#[test]
fn simulate_writes_path_csv_with_headers() {
    let dir = tmp_dir("simulate");
    let config = write_config(&dir, CASE0);
    run_ok(&["simulate", "-O", "mc.paths=5"], &config, &dir);
    let file = fs::read_dir(&dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .find(|e| e.file_name().to_string_lossy().starts_with("simulate-"))
        .expect("simulate output");
    let text = fs::read_to_string(file.path()).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# config="));
    assert!(lines.next().unwrap().starts_with("# seed=7 dt="));
    assert_eq!(lines.next().unwrap(), "path,t,x,pi");
    assert_eq!(text.lines().count(), 3 + 5 * 201);
}

#[test]
fn emit_figure_case2_slab_stays_inside_the_analytic_bounds() {
    let dir = tmp_dir("figure");
    let config = write_config(&dir, CASE2);
    run_ok(&["emit-figure"], &config, &dir);
    let file = fs::read_dir(&dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .find(|e| {
            e.file_name()
                .to_string_lossy()
                .starts_with("emit-figure-section-interval-tend")
        })
        .expect("section interval output");
    let text = fs::read_to_string(file.path()).unwrap();
    let cap = (0.10 - 0.02) / (0.06 - 0.02) * 100.0;
    let mut saw_contact = false;
    for line in text.lines().skip(3) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 3, "{line}");
        if fields[1].is_empty() {
            continue;
        }
        saw_contact = true;
        let x1: f64 = fields[1].parse().unwrap();
        let x2: f64 = fields[2].parse().unwrap();
        assert!(x1 > 100.0, "{line}");
        assert!(x2 < cap, "{line}");
    }
    assert!(saw_contact, "some belief section has contact at t=0");
}

#[test]
fn check_passes_on_case0_and_oracle_emits_three_estimates() {
    let dir = tmp_dir("check");
    let config = write_config(&dir, CASE0);
    let output = run_ok(&["check"], &config, &dir);
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("case=Case0"), "{stdout}");
    assert!(stdout.contains("regions,true"), "{stdout}");
    assert!(stdout.contains("face-consistency,true"), "{stdout}");

    let output = run_ok(
        &[
            "oracle",
            "-O",
            "mc.lattice_time=200",
            "-O",
            "mc.lattice_space=400",
        ],
        &config,
        &dir,
    );
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("european,"), "{stdout}");
    assert!(stdout.contains("lsmc,"), "{stdout}");
    assert!(stdout.contains("lattice,"), "{stdout}");
}

#[test]
fn failing_checks_exit_three() {
    // An absurdly tight tolerance turns the penalty slack at contact nodes
    // into a violation (the never-redeem regime has no contact, so use one
    // with a populated redemption region).
    let dir = tmp_dir("exit3");
    let config = write_config(&dir, CASE2);
    let output = bin()
        .args(["check", "--tol", "1e-13", "--config"])
        .arg(&config)
        .arg("--out-dir")
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(
        output.status.code(),
        Some(3),
        "stdout: {}",
        String::from_utf8_lossy(&output.stdout)
    );
}

#[test]
fn identical_configs_and_seeds_write_identical_outputs() {
    let dir_a = tmp_dir("det-a");
    let dir_b = tmp_dir("det-b");
    let config_a = write_config(&dir_a, CASE0);
    let config_b = write_config(&dir_b, CASE0);
    run_ok(&["simulate", "-O", "mc.paths=50"], &config_a, &dir_a);
    run_ok(&["simulate", "-O", "mc.paths=50"], &config_b, &dir_b);
    let read_only_csv = |dir: &Path| {
        let entry = fs::read_dir(dir)
            .unwrap()
            .filter_map(|e| e.ok())
            .find(|e| e.file_name().to_string_lossy().starts_with("simulate-"))
            .unwrap();
        fs::read_to_string(entry.path()).unwrap()
    };
    assert_eq!(read_only_csv(&dir_a), read_only_csv(&dir_b));
}
