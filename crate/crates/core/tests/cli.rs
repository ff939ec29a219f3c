use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_katolab"));
    c.env_remove("KATOLAB_OUT_DIR");
    c
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(format!("{name}.toml"));
    std::fs::write(&path, body).unwrap();
    path
}

const SMALL_DUMBBELL: &str = r#"
name = "small_dumbbell"
seed = 2
t_final = 0.15
checks = ["kato", "gauge", "be", "bishop_gromov"]

[geometry]
kind = "warped"
dimension = 3
r_max = "pi"
left = "pole"
right = "pole"
warp = "sin(r)*(1-0.3*sin(r)^4)"
resolution = 256

[regime]
kind = "Dprime"
"#;

#[test]
fn list_checks_names_every_check() {
    let out = bin().arg("list-checks").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in [
        "kato",
        "gauge",
        "semigroup",
        "transformation",
        "be",
        "bishop_gromov",
        "doubling",
        "monotonicity",
        "gauss2d",
    ] {
        assert!(text.lines().any(|l| l.starts_with(name)), "{name} missing from\n{text}");
    }
}

#[test]
fn analyze_writes_report_and_curves() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small", SMALL_DUMBBELL);
    let out_dir = tmp.path().join("out");
    let out = bin()
        .args(["analyze", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .args(["--threads", "2"])
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{stdout}\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(stdout.contains("PASS     be"), "{stdout}");
    let dir = out_dir.join("small_dumbbell");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["schema_version"], "1.0");
    assert_eq!(report["status"], "PASS");
    assert_eq!(report["checks"].as_array().unwrap().len(), 4);
    for file in [
        "kato_profile.csv",
        "fields.csv",
        "volume_ratio.csv",
        "margins_be.csv",
        "timings.json",
    ] {
        assert!(dir.join(file).exists(), "{file} missing");
    }
    let profile = std::fs::read_to_string(dir.join("kato_profile.csv")).unwrap();
    assert!(profile.starts_with("t,k_t"), "{}", &profile[..40.min(profile.len())]);
}

#[test]
fn env_var_overrides_out_flag_and_seed_is_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "small",
        &SMALL_DUMBBELL.replace(r#""kato", "gauge", "be", "bishop_gromov""#, r#""kato""#),
    );
    let env_dir = tmp.path().join("env");
    let out = bin()
        .env("KATOLAB_OUT_DIR", &env_dir)
        .args(["analyze", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path().join("flag"))
        .args(["--seed", "99"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(!tmp.path().join("flag").exists());
    let text = std::fs::read_to_string(env_dir.join("small_dumbbell/report.json")).unwrap();
    let report: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(report["provenance"]["seed"], 99);
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = bin()
        .args(["analyze", "--config"])
        .arg(tmp.path().join("absent.toml"))
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));
    let bad = write_config(
        tmp.path(),
        "bad",
        &SMALL_DUMBBELL.replace("t_final = 0.15", "t_final = -1"),
    );
    let out = bin().args(["analyze", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("t_final"));
    let typo = write_config(tmp.path(), "typo", &SMALL_DUMBBELL.replace("seed = 2", "sead = 2"));
    let out = bin().args(["analyze", "--config"]).arg(&typo).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn failing_check_exits_with_one() {
    // the volume ratio of a hyperbolic cap grows, and the fitted constant
    // does not follow the 1/ln(1/(1-eta)) law
    let tmp = tempfile::tempdir().unwrap();
    let body = r#"
name = "cap"
t_final = 0.15
checks = ["monotonicity"]

[geometry]
kind = "warped"
dimension = 3
r_max = 1.5
left = "pole"
right = "reflecting"
warp = "sinh(r)"
resolution = 64

[regime]
kind = "Dprime"
"#;
    let cfg = write_config(tmp.path(), "cap", body);
    let out = bin()
        .args(["analyze", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL     monotonicity"));
}

#[test]
fn sweep_writes_table() {
    let tmp = tempfile::tempdir().unwrap();
    let body = SMALL_DUMBBELL.replace(r#""kato", "gauge", "be", "bishop_gromov""#, r#""kato""#);
    let cfg = write_config(tmp.path(), "small", &body);
    let out = bin()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .args(["--axis", "k_target", "--values", "0.05,0.1"])
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_path(tmp.path().join("small_dumbbell_sweep_k_target.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let k_col = headers.iter().position(|h| h == "regime.k_T").unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 2);
    for (row, target) in rows.iter().zip([0.05, 0.1]) {
        let k: f64 = row[k_col].parse().unwrap();
        assert!((k - target).abs() < 1e-9 * target, "{k} vs {target}");
    }
    let bad = bin()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .args(["--axis", "gamma", "--values", "0.1"])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}
