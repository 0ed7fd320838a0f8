use std::path::Path;
use std::process::{Command, Output};

fn sim(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sim"));
    cmd.args(args);
    if let Some(t) = threads {
        cmd.env("SIM_THREADS", t);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("case.toml");
    std::fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL_PM: &str = "preset = \"pm-contact\"\n[mesh]\nn = 32\n[time]\nT = 0.05\n";

#[test]
fn lists_all_presets() {
    let out = sim(&["list-scenarios"], None);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["heat-contact", "pm-contact", "fast-diffusion", "ode-contact"] {
        assert!(text.contains(name));
    }
}

#[test]
fn run_writes_files_with_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_PM);
    let out_dir = dir.path().join("out");
    let out = sim(&["run", "--config", &cfg, "--path-id", "2", "--out", out_dir.to_str().unwrap()], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("config_hash=") && stdout.contains("master_seed="));
    for f in ["trajectory.csv", "snapshots.csv", "summary.json", "measures.csv", "nu.csv"] {
        let text = std::fs::read_to_string(out_dir.join(f)).unwrap();
        assert!(text.contains("config_hash"), "{f}");
    }
    let traj = std::fs::read_to_string(out_dir.join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().nth(1).unwrap(), "t,mass_l1,energy_l2sq,min_u,penalty_l1,reflected_cum");
}

#[test]
fn trajectory_is_bit_identical_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_PM);
    let mut texts = Vec::new();
    for (k, threads) in ["1", "1", "4"].iter().enumerate() {
        let out_dir = dir.path().join(format!("o{k}"));
        let out = sim(&["run", "--config", &cfg, "--path-id", "5", "--out", out_dir.to_str().unwrap()], Some(threads));
        assert!(out.status.success());
        texts.push(std::fs::read(out_dir.join("trajectory.csv")).unwrap());
    }
    assert_eq!(texts[0], texts[1]);
    assert_eq!(texts[0], texts[2]);
}

#[test]
fn ensemble_output_does_not_depend_on_threads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_PM);
    let mut texts = Vec::new();
    for threads in ["1", "3"] {
        let out_dir = dir.path().join(format!("e{threads}"));
        let out = sim(&["ensemble", "--config", &cfg, "--paths", "5", "--out", out_dir.to_str().unwrap()], Some(threads));
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        texts.push(std::fs::read(out_dir.join("ensemble.csv")).unwrap());
    }
    assert_eq!(texts[0], texts[1]);
}

#[test]
fn invalid_config_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "preset = \"pm-contact\"\n[penalty]\nepsilon = -0.1\n");
    let out = sim(&["run", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("penalty.epsilon") && err.contains("line 3"), "{err}");
    assert!(!dir.path().join("o").exists());
}

#[test]
fn unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[mesh]\nn = 32\ncells = 4\n");
    let out = sim(&["run", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("line 3"));
}

#[test]
fn out_is_required_for_file_commands() {
    let out = sim(&["run", "--config", "pm-contact"], None);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn blow_up_exits_with_numerical_code() {
    let dir = tempfile::tempdir().unwrap();
    let body = "preset = \"heat-contact\"\n[mesh]\nn = 64\n[time]\nT = 10.0\ndt_policy = \"fixed\"\ndt = 0.1\n";
    let cfg = write_config(dir.path(), body);
    let out = sim(&["run", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn non_geometric_eps_list_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_PM);
    let out = sim(&["study-epsilon", "--config", &cfg, "--eps", "0.1,0.05,0.02,0.01", "--out", dir.path().to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn epsilon_study_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_PM);
    let out_dir = dir.path().join("eps");
    let out = sim(
        &["study-epsilon", "--config", &cfg, "--eps", "0.1,0.05,0.025,0.0125", "--out", out_dir.to_str().unwrap()],
        None,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("epsilon_study.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2 + 4);
}

#[test]
fn fast_suite_writes_checks_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_PM);
    let out_dir = dir.path().join("v");
    let out = sim(&["verify", "--suite", "fast", "--config", &cfg, "--out", out_dir.to_str().unwrap()], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let checks = std::fs::read_to_string(out_dir.join("checks.csv")).unwrap();
    assert_eq!(checks.lines().nth(1).unwrap(), "check_id,status,observed,tolerance,context_hash");
    assert!(checks.contains("mass_identity,pass"));
    assert!(std::fs::read_to_string(out_dir.join("report.md")).unwrap().contains("checks passed"));
}

#[test]
fn audit_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = sim(&["audit", "--config", "pm-contact", "--out", dir.path().to_str().unwrap()], None);
    assert!(out.status.success());
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("audit.json")).unwrap()).unwrap();
    assert!(doc["audit"]["entries"].as_array().unwrap().len() >= 8);
    assert!(String::from_utf8(out.stdout).unwrap().contains("phi_monotone"));
}
