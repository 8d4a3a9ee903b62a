//! End-to-end checks of the binary: determinism, formats, exit codes.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_topocrystal"))
}

fn repo_file(rel: &str) -> String {
    format!("{}/../../{}", env!("CARGO_MANIFEST_DIR"), rel)
}

#[test]
fn identical_invocations_give_byte_identical_output() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for run in 0..2 {
        let out = dir.path().join(format!("verify-{run}.csv"));
        let status = bin()
            .args([
                "verify",
                "--crystal",
                "z1",
                "--perturbation",
                &repo_file("specs/hub.pert"),
                "--kmin",
                "2",
                "--kmax",
                "7",
                "--trials",
                "5",
                "--support",
                "4",
                "--seed",
                "11",
                "--out",
            ])
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success());
        outputs.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1], "same config + seed must be byte-identical");
}

#[test]
fn json_mirrors_csv() {
    let output = bin()
        .args(["thresholds", "--crystal", "toblerone", "--n", "128", "--format", "json"])
        .output()
        .unwrap();
    assert!(output.status.success());
    let doc: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    let rows = doc["rows"].as_array().unwrap();
    let values: Vec<f64> = rows.iter().map(|r| r["threshold"].as_f64().unwrap()).collect();
    for expected in [0.0, 3.0, 4.0, 7.0] {
        assert!(
            values.iter().any(|v| (v - expected).abs() < 1e-3),
            "threshold {expected} missing from {values:?}"
        );
    }
}

#[test]
fn bands_csv_covers_the_analytic_band() {
    let output = bin()
        .args(["bands", "--crystal", "z1", "--n", "64"])
        .output()
        .unwrap();
    assert!(output.status.success());
    let text = String::from_utf8(output.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "index,xi_0,band_0,eig_tol");
    let values: Vec<f64> = lines
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(values.len(), 64);
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!(lo.abs() < 1e-12 && (hi - 4.0).abs() < 1e-12);
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.toml");
    std::fs::write(&config, "[thresholds]\ncrystal = \"z1\"\nn = 32\n").unwrap();
    let output = bin()
        .args(["thresholds", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(output.status.success());
    let text = String::from_utf8(output.stdout).unwrap();
    assert!(text.contains(",32,"), "config n=32 not used:\n{text}");

    let output = bin()
        .args(["thresholds", "--config"])
        .arg(&config)
        .args(["--n", "16"])
        .output()
        .unwrap();
    let text = String::from_utf8(output.stdout).unwrap();
    assert!(text.contains(",16,"), "flag must override config:\n{text}");
}

#[test]
fn validation_errors_exit_2_and_refusals_exit_3() {
    let status = bin()
        .args(["bands", "--crystal", "/nonexistent/file"])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));

    let status = bin()
        .args(["spectrum", "--crystal", "z1", "--interval", "3,1"])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));

    // an impossible decomposition tolerance is a numerical refusal
    let status = bin()
        .args([
            "decomp-check",
            "--crystal",
            "z1",
            "--perturbation",
            &repo_file("specs/hub.pert"),
            "--trials",
            "3",
            "--tolerance",
            "1e-30",
            "--out",
            "/dev/null",
        ])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(3));
}

#[test]
fn shipped_perturbation_specs_parse_and_verify() {
    for (crystal, pert) in [
        ("z1", "specs/hub.pert"),
        ("z1", "specs/complete.pert"),
        ("toblerone", "specs/toblerone.pert"),
    ] {
        let output = bin()
            .args([
                "decomp-check",
                "--crystal",
                crystal,
                "--perturbation",
                &repo_file(pert),
                "--trials",
                "5",
                "--support",
                "4",
                "--seed",
                "1",
                "--tolerance",
                "1e-12",
                "--out",
                "/dev/null",
            ])
            .output()
            .unwrap();
        assert!(
            output.status.success(),
            "{pert}: {}",
            String::from_utf8_lossy(&output.stderr)
        );
    }
}

#[test]
fn shipped_crystal_specs_match_builtins() {
    let from_file = bin()
        .args(["thresholds", "--crystal", &repo_file("specs/toblerone.crystal"), "--n", "64"])
        .output()
        .unwrap();
    let builtin = bin()
        .args(["thresholds", "--crystal", "toblerone", "--n", "64"])
        .output()
        .unwrap();
    assert!(from_file.status.success());
    assert_eq!(from_file.stdout, builtin.stdout);
}
