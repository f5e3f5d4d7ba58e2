//! Black-box runs of the `qam` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
[simulation]
t_final = 1.0
n_traj = 3
dim = 12

[dissipator]
kind = "translated"
nu_minus = 1.0
"#;

fn qam(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("experiment.toml");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_qam"))
        .arg("--config")
        .arg(&cfg)
        .arg("--quiet")
        .args(args)
        .env_remove("QAM_WORKERS")
        .output()
        .unwrap()
}

fn cell(root: &Path) -> PathBuf {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root).unwrap().map(|e| e.unwrap().path()).filter(|p| p.is_dir()).collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs.pop().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_key_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = qam(tmp.path(), "[simulation]\nt_finl = 3.0\n", &["run"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("t_finl"), "{}", stderr(&o));
}

#[test]
fn invalid_value_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = qam(tmp.path(), "[simulation]\ndt = -1.0\n", &["run"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn run_writes_a_complete_bundle() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = qam(tmp.path(), SMALL, &["--out", out.to_str().unwrap(), "run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("manifest.json").is_file());
    let dir = cell(&out);
    for f in ["msd_quantum.csv", "msd_oracle.csv", "msd_driving.csv", "diagnostics.json", "fits.json", "manifest.json"] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    assert!(!dir.join("PARTIAL").exists());
    let csv = fs::read_to_string(dir.join("msd_quantum.csv")).unwrap();
    assert!(csv.starts_with("t,msd,stderr,n_traj\n"));
    let diag: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("diagnostics.json")).unwrap()).unwrap();
    assert_eq!(diag["partial"], false);
}

#[test]
fn outputs_do_not_depend_on_workers_or_its_source() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str, flag: &str, env: Option<&str>| {
        let out = tmp.path().join(name);
        let cfg = tmp.path().join("experiment.toml");
        fs::write(&cfg, SMALL).unwrap();
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_qam"));
        cmd.args(["--quiet", "--workers", flag, "--out"]).arg(&out).arg("--config").arg(&cfg).arg("run");
        match env {
            Some(v) => cmd.env("QAM_WORKERS", v),
            None => cmd.env_remove("QAM_WORKERS"),
        };
        let o = cmd.output().unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        let dir = cell(&out);
        ["msd_quantum.csv", "msd_oracle.csv", "msd_driving.csv"].map(|f| fs::read(dir.join(f)).unwrap())
    };
    let one = run("one", "1", None);
    assert_eq!(one, run("three", "3", None));
    assert_eq!(one, run("env", "1", Some("2")));
}

#[test]
fn seed_flag_changes_the_ensemble() {
    let tmp = tempfile::tempdir().unwrap();
    let read = |name: &str, seed: &str| {
        let out = tmp.path().join(name);
        let o = qam(tmp.path(), SMALL, &["--out", out.to_str().unwrap(), "--seed", seed, "run"]);
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read(cell(&out).join("msd_driving.csv")).unwrap()
    };
    assert_ne!(read("a", "0"), read("b", "7"));
}

#[test]
fn sweep_writes_one_directory_per_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = format!("{SMALL}\n[[sweep]]\npath = \"dissipator.nu_minus\"\nvalues = [0.01, 1.0]\n");
    let o = qam(tmp.path(), &cfg, &["--out", out.to_str().unwrap(), "sweep"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let n = fs::read_dir(&out).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count();
    assert_eq!(n, 2);
}

#[test]
fn compare_oracle_check_passes_and_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = qam(tmp.path(), SMALL, &["--out", out.to_str().unwrap(), "compare-oracle", "--check"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rep: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("comparison.json")).unwrap()).unwrap();
    assert_eq!(rep["pass"], true);
    assert_eq!(rep["cells"].as_array().unwrap().len(), 1);
}

#[test]
fn fit_check_fails_on_an_impossible_expectation() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let fits = "\n[[fit]]\nname = \"whole\"\nseries = \"driving\"\nt_lo = 0.1\nt_hi = 1.0\n";
    let o = qam(tmp.path(), &format!("{SMALL}{fits}"), &["--out", out.to_str().unwrap(), "run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = qam(tmp.path(), &format!("{SMALL}{fits}"), &["fit", "--input", out.to_str().unwrap(), "--check"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let strict = format!("{SMALL}{fits}expected = 100.0\ntolerance = 0.1\n");
    let o = qam(tmp.path(), &strict, &["fit", "--input", out.to_str().unwrap(), "--check"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    let written = fs::read_to_string(cell(&out).join("fits.json")).unwrap();
    assert!(written.contains("\"whole\""));
}

#[test]
fn emit_plots_writes_a_gnuplot_script() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    assert!(qam(tmp.path(), SMALL, &["--out", out.to_str().unwrap(), "run"]).status.success());
    let o = qam(tmp.path(), SMALL, &["emit-plots", "--input", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let script = fs::read_to_string(out.join("plots.gp")).unwrap();
    assert!(script.contains("msd_quantum.csv"));
}

#[test]
fn wigner_reports_the_static_steady_state() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = "[dissipator]\nkind = \"static\"\nnu_minus = 10.0\n";
    let o = qam(tmp.path(), cfg, &["--out", out.to_str().unwrap(), "wigner", "--x-c", "3", "--t-relax", "10"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = cell(&out);
    for f in ["wigner.csv", "analytic.json", "peak.json"] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    let peak: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("peak.json")).unwrap()).unwrap();
    let mean = &peak["state"]["mean"];
    let analytic = &peak["analytic_mean"];
    for i in 0..2 {
        let (m, a) = (mean[i].as_f64().unwrap(), analytic[i].as_f64().unwrap());
        assert!((m - a).abs() < 1e-3, "{m} vs {a}");
    }
}

#[test]
fn wigner_rejects_a_nonpositive_relaxation_time() {
    let tmp = tempfile::tempdir().unwrap();
    let o = qam(tmp.path(), SMALL, &["--out", tmp.path().join("o").to_str().unwrap(), "wigner", "--t-relax", "-1"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}
