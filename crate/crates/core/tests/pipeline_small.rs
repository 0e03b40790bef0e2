//! Every pipeline command on a 3 × 3 grid with a few epochs.

use pam_node::io;
use pam_node::pipeline::{self, PipelineError, ProfileSpec, RunConfig};
use pam_node::plant::GridSpec;
use std::path::Path;

fn small_config(root: &Path) -> RunConfig {
    let mut cfg = RunConfig { data_dir: root.join("data"), checkpoint: root.join("run/model.json"), ..RunConfig::default() };
    cfg.generate.grid = GridSpec { levels_psi: vec![30.0, 50.0, 70.0] };
    cfg.generate.duration_s = 1.0;
    cfg.train.max_epochs = 150;
    cfg.train.stage_epoch_cap = 30;
    cfg.train.horizon_s = 0.5;
    cfg.train.damping_schedule_kg_s = vec![6500.0, 2000.0, 500.0, 100.0, 0.0];
    cfg.train.stage_datasets = vec![vec!["pf030.0_pe030.0".into(), "pf050.0_pe050.0".into(), "pf070.0_pe070.0".into()]];
    cfg.profile = ProfileSpec::HeldPose { x_mm: 0.0, levels_n_mm: vec![150.0], hold_s: 1.0, dt_s: 0.01 };
    cfg
}

fn run_all(root: &Path) -> Result<(), PipelineError> {
    let cfg = small_config(root);
    let out = root.join("run");
    let m = pipeline::generate(&cfg, &cfg.data_dir)?;
    assert_eq!(m.trials.len(), 9);
    let (_, log) = pipeline::train(&cfg, &out)?;
    assert!(log.records.len() <= 150);
    let (rows, summary) = pipeline::evaluate(&cfg, &out)?;
    assert_eq!(rows.len(), 9);
    assert_eq!((summary.n_train, summary.n_held_out), (3, 6));
    let (plan, _) = pipeline::plan(&cfg, &out)?;
    assert_eq!(plan.rows.len(), 101);
    let id = pipeline::identify(&cfg, &out)?;
    assert_eq!(id.comparison.levels.len(), 1);
    let cmp = pipeline::compare_ep(&cfg, &out)?;
    assert_eq!(cmp.ep.comparison.levels.len(), 1);
    let written = pipeline::report(&cfg, &out)?;
    assert!(written.iter().all(|p| p.exists()));
    Ok(())
}

#[test]
fn every_command_runs_and_reruns_identically() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_all(a.path()).unwrap();
    run_all(b.path()).unwrap();
    for f in ["model.json", "train_log.jsonl", "r2.csv", "plan.csv", "events_nn.csv", "events_ep.csv", "comparison.json", "report.md"] {
        let x = std::fs::read(a.path().join("run").join(f)).unwrap();
        let y = std::fs::read(b.path().join("run").join(f)).unwrap();
        assert!(x == y, "{f} differs between identical runs");
    }
    let (ma, _) = io::load_datasets(&a.path().join("data")).unwrap();
    assert_eq!(ma.seed, 0);
}

#[test]
fn missing_inputs_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let e = pipeline::train(&cfg, &dir.path().join("run")).unwrap_err();
    assert_eq!(e.exit_code(), 2, "{e}");
    let e = pipeline::plan(&cfg, &dir.path().join("run")).unwrap_err();
    assert_eq!(e.exit_code(), 2, "{e}");
}

#[test]
fn untrained_model_has_no_ep_fit_and_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.train.max_epochs = 0;
    let out = dir.path().join("run");
    pipeline::generate(&cfg, &cfg.data_dir).unwrap();
    pipeline::train(&cfg, &out).unwrap();
    let e = pipeline::compare_ep(&cfg, &out).unwrap_err();
    assert_eq!(e.exit_code(), 3, "{e}");
}

#[test]
fn resume_continues_from_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    let out = dir.path().join("run");
    pipeline::generate(&cfg, &cfg.data_dir).unwrap();
    pipeline::train(&cfg, &out).unwrap();
    cfg.resume = Some(pipeline::ResumeSection { checkpoint: out.join("model.json"), start_stage: 2 });
    let (_, log) = pipeline::train(&cfg, &dir.path().join("resumed")).unwrap();
    assert!(log.records.iter().all(|r| r.stage >= 2));
}
