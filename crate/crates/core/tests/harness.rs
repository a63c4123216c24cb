mod common;

use std::process::Command;

use hdqr::harness::{
    compare_algorithms, emit_plots, read_metrics, read_transitions, run_experiment, HarnessError, Manifest, RunConfig,
};

fn config(horizon: u64) -> RunConfig {
    let mut c = RunConfig::load(common::three_link_config_path()).unwrap();
    c.horizon = horizon;
    c
}

fn small(horizon: u64) -> RunConfig {
    let mut c = config(horizon);
    c.learning.memory_size = 100;
    c.learning.target_update_period = 50;
    c
}

#[test]
fn warmup_only_run_never_learns() {
    let dir = tempfile::tempdir().unwrap();
    let c = small(100);
    let summary = run_experiment(&c, dir.path()).unwrap();
    assert_eq!(summary.learn_steps, 0);
    let records = read_metrics(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(records.len(), 100);
    assert!(records.iter().all(|r| r.loss.is_none() && r.warmup));
}

#[test]
fn learning_starts_with_a_full_memory() {
    let dir = tempfile::tempdir().unwrap();
    let c = small(400);
    run_experiment(&c, dir.path()).unwrap();
    let records = read_metrics(dir.path().join("metrics.csv")).unwrap();
    let first = records.iter().position(|r| r.loss.is_some()).unwrap() as u64;
    assert!(records[..first as usize].iter().all(|r| r.warmup));
    let stored =
        read_transitions(dir.path().join("transitions.csv")).unwrap().iter().filter(|t| t.commit_step <= first).count();
    assert_eq!(stored, c.learning.memory_size);
}

#[test]
fn manifest_echoes_config() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(150);
    c.learning.gamma = 0.85;
    c.rewards.w5 = 7.0;
    run_experiment(&c, dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("manifest.toml")).unwrap();
    let manifest: Manifest = toml::from_str(&text).unwrap();
    assert_eq!(manifest.config, c);
    assert_eq!(manifest.seed, c.seed);
    assert_eq!(manifest.agents.iter().find(|a| a.group == 40).unwrap().input_width, 21);
}

#[test]
fn plots_have_one_row_per_step() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&small(250), dir.path()).unwrap();
    let files = emit_plots(dir.path(), Some(100)).unwrap();
    assert_eq!(files.rows, 250);
    for f in [&files.utilization, &files.loss, &files.reward] {
        let lines = std::fs::read_to_string(f).unwrap().lines().count();
        assert_eq!(lines, 251);
    }
    let learned = read_metrics(dir.path().join("metrics.csv")).unwrap().iter().filter(|r| r.loss.is_some()).count();
    let medians = std::fs::read_to_string(dir.path().join("loss_medians.csv")).unwrap().lines().count() - 1;
    assert_eq!(medians, learned.div_ceil(100));
}

#[test]
fn warmup_comparison_ties() {
    let dir = tempfile::tempdir().unwrap();
    let rows = compare_algorithms(&small(100), &[3], dir.path()).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].ddqn, rows[0].dqn);
    assert_eq!(rows[0].sign, 0);
    assert!(matches!(compare_algorithms(&small(100), &[], dir.path()), Err(HarnessError::NoSeeds)));
}

#[test]
fn cli_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_hdqr");
    let dir = tempfile::tempdir().unwrap();

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "horizon = 0\n").unwrap();
    let status = Command::new(bin)
        .args(["run", "--config", bad.to_str().unwrap(), "--seed", "1", "--out"])
        .arg(dir.path().join("a"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    let missing = dir.path().join("missing_topology.toml");
    std::fs::write(&missing, "topology = \"nowhere.toml\"\n").unwrap();
    let status = Command::new(bin)
        .args(["run", "--config", missing.to_str().unwrap(), "--seed", "1", "--out"])
        .arg(dir.path().join("b"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));

    let ok = Command::new(bin)
        .args(["run", "--config", common::three_link_config_path().to_str().unwrap(), "--seed", "2", "--steps", "50"])
        .args(["--algo", "dqn", "--out"])
        .arg(dir.path().join("c"))
        .output()
        .unwrap();
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    let plot = Command::new(bin).args(["plot", "--run"]).arg(dir.path().join("c")).status().unwrap();
    assert!(plot.success());

    let no_seeds = Command::new(bin)
        .args(["compare", "--config", common::three_link_config_path().to_str().unwrap(), "--out"])
        .arg(dir.path().join("d"))
        .status()
        .unwrap();
    assert_eq!(no_seeds.code(), Some(2));
}
