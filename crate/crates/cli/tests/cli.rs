use std::path::Path;
use std::process::{Command, Output};

use beamtrain::ExperimentConfig;

fn beamtrain(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_beamtrain")).args(args).current_dir(cwd).output().unwrap()
}

#[test]
fn missing_config_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = beamtrain(&["--config", "nowhere.toml", "gen-data"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.toml"));
}

#[test]
fn invalid_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[system]\ntx_ratio = 3\n").unwrap();
    let out = beamtrain(&["--config", "bad.toml", "gen-data"], dir.path());
    assert!(!out.status.success());
    std::fs::write(dir.path().join("typo.toml"), "[system]\ntx_antenas = 8\n").unwrap();
    let out = beamtrain(&["--config", "typo.toml", "gen-data"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("tx_antenas"));
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = beamtrain(&["gradcheck"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(!String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn codebook_dump_has_one_row_per_beam() {
    let dir = tempfile::tempdir().unwrap();
    let out = beamtrain(&["dump-codebook", "--points", "5"], dir.path());
    assert!(out.status.success());
    let narrow = std::fs::read_to_string(dir.path().join("codebook_narrow.csv")).unwrap();
    let wide = std::fs::read_to_string(dir.path().join("codebook_wide.csv")).unwrap();
    assert_eq!(narrow.lines().count(), 65);
    assert_eq!(wide.lines().count(), 17);
    assert_eq!(narrow.lines().next().unwrap().split(',').count(), 7);
}

#[test]
fn baseline_eval_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.data.samples = 20;
    cfg.scheme.scheme = beamtrain::predictors::Scheme::TwoLevel;
    std::fs::write(dir.path().join("c.toml"), cfg.to_toml_string()).unwrap();
    let out = beamtrain(&["--config", "c.toml", "--out", "r", "eval"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let steps = std::fs::read_to_string(dir.path().join("r/eval_steps.csv")).unwrap();
    assert_eq!(steps.lines().count(), 11);
    assert!(steps.starts_with("scheme,criterion,k,k_n,t,g_n,e_bar,budget,loss_n"));
    let train = beamtrain(&["--config", "c.toml", "train"], dir.path());
    assert!(!train.status.success());
}

#[test]
fn shipped_configs_are_valid() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(root).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 2);
    let full =
        ExperimentConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/defaults.toml")).unwrap();
    assert_eq!(full, ExperimentConfig::default());
}
