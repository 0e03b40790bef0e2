use std::path::Path;
use std::process::{Command, Output};

fn pam(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pam-node")).current_dir(dir).args(args).output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("cfg.json");
    std::fs::write(&p, body).unwrap();
    p.display().to_string()
}

const SMALL: &str = r#"{
  "generate": {"grid": {"levels_psi": [30.0, 50.0, 70.0]}, "duration_s": 0.5},
  "train": {"max_epochs": 0, "horizon_s": 0.4,
            "stage_datasets": [["pf030.0_pe030.0", "pf050.0_pe050.0", "pf070.0_pe070.0"]]},
  "profile": {"kind": "held_pose", "x_mm": 0.0, "levels_n_mm": [150.0], "hold_s": 1.0, "dt_s": 0.01}
}"#;

#[test]
fn help_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let o = pam(dir.path(), &["--help"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for cmd in ["generate", "train", "evaluate", "plan", "identify", "compare-ep", "report"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"train": {"learning_rate": 0.1}}"#);
    let o = pam(dir.path(), &["generate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("config"));
    let o = pam(dir.path(), &["train", "--config", "does-not-exist.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_dataset_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = pam(dir.path(), &["train"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn seed_override_and_grid_flag_reach_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let o = pam(dir.path(), &["generate", "--config", &cfg, "--seed", "9", "--out", "d"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("d/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 9);
    assert_eq!(m["trials"].as_array().unwrap().len(), 9);
    let o = pam(dir.path(), &["generate", "--config", &cfg, "--full-grid", "--out", "full"]);
    assert!(o.status.success());
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("full/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["trials"].as_array().unwrap().len(), 225);
}

#[test]
fn untrained_model_comparison_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    assert!(pam(dir.path(), &["generate", "--config", &cfg]).status.success());
    let o = pam(dir.path(), &["train", "--config", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("run/model.json").exists());
    let o = pam(dir.path(), &["compare-ep", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}
