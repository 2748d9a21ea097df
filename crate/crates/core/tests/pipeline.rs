use std::fs;
use std::path::Path;
use std::process::Command;

use mavae_core::cli::{self, RunConfig};
use mavae_core::detect::ReverseMode;

fn config_text(dir: &Path) -> String {
    format!(
        r#"
[data]
dir = "{data}"
seed = 3

[data.synth]
duration_s = 60.0

[data.plan]
train = 3
val = 2
test_normal = 2
anomalies_per_kind = 1
kinds = ["sport_mode", "battery_simulator"]

[model]
window = 16
latent_dim = 2
heads = 2
outer_units = 4
inner_units = 3

[train]
batch_size = 16
max_epochs = 2
patience = 5

[detect]
train_shift = 8

[paths]
run_dir = "{run}"
"#,
        data = dir.join("data").display(),
        run = dir.join("run").display()
    )
}

fn mavae(config: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_mavae"))
        .arg("--config")
        .arg(config)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

#[test]
fn cli_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.toml");
    fs::write(&config, config_text(tmp.path())).unwrap();

    let out = mavae(&config, &["gen"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    // refusing to overwrite is a path error
    assert_eq!(mavae(&config, &["gen"]).status.code(), Some(5));
    assert!(mavae(&config, &["gen", "--force"]).status.success());

    for args in [&["train"][..], &["detect", "--reverse-mode", "last"], &["eval"], &["compare-reverse"]] {
        let out = mavae(&config, args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let run = tmp.path().join("run");
    for f in ["model.ckpt", "norm.json", "history.csv", "detections.json", "eval.json", "pr_curve.csv", "reverse_modes.json"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let history = fs::read_to_string(run.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);
    let report = fs::read_to_string(run.join("reports/test-sport_mode-0000.csv")).unwrap();
    let header = report.lines().next().unwrap();
    assert!(header.starts_with("t,s,mu_Vehicle Speed"));
    assert_eq!(report.lines().count(), 121 + 1);
    let det: cli::Detections = serde_json::from_str(&fs::read_to_string(run.join("detections.json")).unwrap()).unwrap();
    assert_eq!(det.reverse_mode, ReverseMode::Last);
    assert_eq!(det.test.len(), 4);
    assert!(det.validation_peaks.iter().all(|&p| p <= det.tau));
}

#[test]
fn exit_codes_follow_error_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.toml");
    fs::write(&config, "[model]\nwidth = 4\n").unwrap();
    assert_eq!(mavae(&config, &["gen"]).status.code(), Some(2));
    assert_eq!(mavae(&tmp.path().join("absent.toml"), &["gen"]).status.code(), Some(5));
    assert_eq!(mavae(&config, &["detect", "--reverse-mode", "median"]).status.code(), Some(2));

    // too-short sequences for the window are a contract violation
    fs::write(&config, config_text(tmp.path()).replace("window = 16", "window = 512")).unwrap();
    assert!(mavae(&config, &["gen"]).status.success());
    assert_eq!(mavae(&config, &["train"]).status.code(), Some(4));

    // a corrupt sequence file is a data error
    let data = tmp.path().join("data");
    fs::write(data.join("train-0000.seq"), b"MAVAESEQ\x01\x00").unwrap();
    assert_eq!(mavae(&config, &["train"]).status.code(), Some(3));
}

#[test]
fn library_run_without_attention() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::from_toml(&config_text(tmp.path())).unwrap();
    cfg.model.no_attention = true;
    cli::gen(&cfg, false).unwrap();
    let model = cli::train_run(&cfg, &cfg.paths.run_dir).unwrap();
    assert!(model.params.attention.is_none());
    let result = cli::detect_run(&cfg, &cfg.paths.run_dir, ReverseMode::Mean).unwrap();
    assert_eq!(result.val_flagged(), 0);
    assert_eq!(result.reports.len(), 4);
}
