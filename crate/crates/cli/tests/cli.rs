//! End-to-end runs of the `ks-sim` binary: exit codes, artifact layout, and
//! the replay guarantee.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ks_sim(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ks-sim"))
        .args(args)
        .current_dir(cwd)
        .env_remove("KS_SIM_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const SMALL_RUN: &str = r#"
resolution = [48]

[domain]
kind = "interval"
a = 0.0
b = 3.141592653589793

[initial]
profile = "cosine-bump"
base = 1.0
amp = 0.4

[params]
chi = 0.5
eps = 0.1
n_eff = 2
t_end = 0.05
dt_max = 1e-3

[output]
samples = 11
"#;

#[test]
fn simulate_writes_artifacts_and_keeps_mass_flat() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.toml", SMALL_RUN);
    let out = ks_sim(&["--config", &cfg, "--out-dir", "artifacts"], tmp.path());
    assert!(out.status.success(), "stderr: {}", stderr(&out));

    let dir = tmp.path().join("artifacts");
    for name in ["ledger.csv", "snaps.bin", "meta.json"] {
        assert!(dir.join(name).exists(), "missing {name}");
    }

    let csv = fs::read_to_string(dir.join("ledger.csv")).unwrap();
    let masses: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(masses.len(), 11);
    let m0 = masses[0];
    for m in &masses {
        assert!((m - m0).abs() <= 1e-10 * m0, "mass drifted: {m0} -> {m}");
    }
}

#[test]
fn supercritical_chi_is_rejected_without_the_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let body = SMALL_RUN
        .replace("chi = 0.5", "chi = 3.0\np = 0.2")
        .replace("n_eff = 2", "n_eff = 3");
    let cfg = write_config(tmp.path(), "run.toml", &body);

    let out = ks_sim(&["--config", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("n/(n-2)"), "stderr: {}", stderr(&out));

    let out = ks_sim(
        &["--config", &cfg, "--allow-supercritical", "--out-dir", "sc"],
        tmp.path(),
    );
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(tmp.path().join("sc/meta.json").exists());
}

#[test]
fn unknown_config_keys_are_named_in_the_error() {
    let tmp = tempfile::tempdir().unwrap();
    let body = format!("{SMALL_RUN}\n[sweep]\nbogus_knob = 3\n");
    let cfg = write_config(tmp.path(), "run.toml", &body);
    let out = ks_sim(&["--config", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("bogus_knob"), "stderr: {}", stderr(&out));
}

#[test]
fn meta_json_replays_the_run_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.toml", SMALL_RUN);
    let out = ks_sim(&["--config", &cfg, "--out-dir", "one"], tmp.path());
    assert!(out.status.success(), "stderr: {}", stderr(&out));

    let meta = tmp.path().join("one/meta.json");
    let out = ks_sim(
        &["--config", meta.to_str().unwrap(), "--out-dir", "two"],
        tmp.path(),
    );
    assert!(out.status.success(), "stderr: {}", stderr(&out));

    for name in ["ledger.csv", "snaps.bin"] {
        let a = fs::read(tmp.path().join("one").join(name)).unwrap();
        let b = fs::read(tmp.path().join("two").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between the run and its replay");
    }
}

#[test]
fn check_mode_revalidates_a_stored_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.toml", SMALL_RUN);
    let out = ks_sim(&["--config", &cfg, "--out-dir", "stored"], tmp.path());
    assert!(out.status.success(), "stderr: {}", stderr(&out));

    // --run-dir alone defaults to check mode.
    let out = ks_sim(&["--run-dir", "stored"], tmp.path());
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("overall: ok"), "stdout: {}", stdout(&out));
    assert!(tmp.path().join("stored/residual_report.json").exists());
}

#[test]
fn check_mode_without_a_run_dir_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ks_sim(&["--mode", "check"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--run-dir"), "stderr: {}", stderr(&out));
}

#[test]
fn compare_ode_prints_the_bound_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "ode.toml",
        "mode = \"compare-ode\"\n\n[ode]\na = 1.0\nb = 4.0\n",
    );
    let out = ks_sim(&["--config", &cfg, "--out-dir", "ode"], tmp.path());
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("universal bound holds"), "stdout: {text}");
    assert!(tmp.path().join("ode/ode_report.json").exists());
}

#[test]
fn sweep_lays_out_one_directory_per_eps() {
    let tmp = tempfile::tempdir().unwrap();
    let body = SMALL_RUN
        .replace("eps = 0.1", "eps_list = [0.2, 0.1, 0.05]")
        .replace("resolution = [48]", "mode = \"sweep\"\nresolution = [32]");
    let cfg = write_config(tmp.path(), "sweep.toml", &body);
    let out = ks_sim(&["--config", &cfg, "--out-dir", "sw", "--workers", "2"], tmp.path());
    assert!(out.status.success(), "stderr: {}", stderr(&out));

    assert!(tmp.path().join("sw/sweep.json").exists());
    for label in ["eps_2.000000e-1", "eps_1.000000e-1", "eps_5.000000e-2"] {
        let run = tmp.path().join("sw/runs").join(label);
        assert!(run.join("ledger.csv").exists(), "missing run dir {label}");
        assert!(run.join("meta.json").exists());
    }

    let report = stdout(&out);
    assert!(report.contains("eps"), "stdout: {report}");
}

#[test]
fn massless_data_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let body = SMALL_RUN
        .replace("base = 1.0", "base = 0.0")
        .replace("amp = 0.4", "amp = 0.0");
    let cfg = write_config(tmp.path(), "run.toml", &body);
    let out = ks_sim(&["--config", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("mass"), "stderr: {}", stderr(&out));
}

#[test]
fn ceiling_stop_exits_four_unless_exploratory() {
    let tmp = tempfile::tempdir().unwrap();
    let body = format!("{SMALL_RUN}ceiling = 0.5\n");
    let cfg = write_config(tmp.path(), "run.toml", &body);

    let out = ks_sim(&["--config", &cfg, "--out-dir", "hit"], tmp.path());
    assert_eq!(out.status.code(), Some(4), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("ceiling"), "stderr: {}", stderr(&out));
    // Artifacts still land so the truncated run can be inspected.
    assert!(tmp.path().join("hit/meta.json").exists());

    let out = ks_sim(
        &["--config", &cfg, "--allow-supercritical", "--out-dir", "hit2"],
        tmp.path(),
    );
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("ceiling"), "stdout: {}", stdout(&out));
}

#[test]
fn out_dir_env_var_is_the_fallback() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.toml", SMALL_RUN);
    let out = Command::new(env!("CARGO_BIN_EXE_ks-sim"))
        .args(["--config", &cfg])
        .current_dir(tmp.path())
        .env("KS_SIM_OUT_DIR", "from_env")
        .output()
        .expect("binary runs");
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(tmp.path().join("from_env/meta.json").exists());
}
