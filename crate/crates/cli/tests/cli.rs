use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cachefed::features::{generate_world, write_features, write_text_head, SynthSpec};

fn cachefed(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cachefed"))
        .args(args)
        .env("CACHEFED_THREADS", "2")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn world(dir: &Path, extra: &[&str]) -> PathBuf {
    let prefix = dir.join("w");
    let mut args = vec!["gen-synth", "--out", p(&prefix)];
    args.extend_from_slice(extra);
    let o = cachefed(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    prefix
}

#[derive(Debug, serde::Deserialize)]
struct Row {
    round: usize,
    accuracy: f64,
    mean_loss: Option<f64>,
}

fn rounds(dir: &Path) -> Vec<Row> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(dir.join("rounds.csv"))
        .unwrap()
        .deserialize()
        .map(|r| r.unwrap())
        .collect()
}

fn checksums(o: &Output) -> Vec<String> {
    stdout(o)
        .lines()
        .filter(|l| l.ends_with(".cff"))
        .map(|l| l.split_whitespace().next().unwrap().to_string())
        .collect()
}

#[test]
fn gen_synth_checksums_are_stable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["--classes", "10", "--shots", "16", "--dim", "64", "--seed", "7"];
    let run = |d: &Path| {
        let prefix = d.join("w");
        let mut v = vec!["gen-synth", "--out", p(&prefix)];
        v.extend_from_slice(&args);
        cachefed(&v)
    };
    let (x, y) = (run(a.path()), run(b.path()));
    assert_eq!(checksums(&x).len(), 4);
    assert_eq!(checksums(&x), checksums(&y));
    for suffix in ["train", "test", "synthetic", "text"] {
        assert!(a.path().join(format!("w.{suffix}.cff")).exists());
    }
    assert!(stdout(&x).contains("seed = 7"));
}

#[test]
fn zero_shots_is_a_validation_error() {
    let d = tempfile::tempdir().unwrap();
    let o = cachefed(&["gen-synth", "--shots", "0", "--out", p(&d.path().join("w"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_with_reference_hyperparameters_logs_every_round() {
    let d = tempfile::tempdir().unwrap();
    let prefix = world(d.path(), &[]);
    let out = d.path().join("run");
    let o = cachefed(&[
        "train", "--data", p(&prefix), "--partition", "pat", "--clients", "10", "--rounds", "20",
        "--local-epochs", "1", "--alpha", "0.5", "--beta", "1.0", "--lr", "0.001", "--seed", "1", "--out", p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = rounds(&out);
    assert_eq!(rows.len(), 21);
    assert!(rows[0].mean_loss.is_none());
    assert!(rows[1..].iter().all(|r| r.mean_loss.is_some()));
    let record: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("record.json")).unwrap()).unwrap();
    assert_eq!(record["history"].as_array().unwrap().len(), 20);
    assert!(out.join("checkpoint.cfm").exists());
    assert_eq!(std::fs::read_to_string(out.join("rounds.jsonl")).unwrap().lines().count(), 21);
}

#[test]
fn zero_rounds_emit_only_the_initial_evaluation() {
    let d = tempfile::tempdir().unwrap();
    let prefix = world(d.path(), &[]);
    let out = d.path().join("run");
    let o = cachefed(&["train", "--data", p(&prefix), "--rounds", "0", "--out", p(&out)]);
    assert!(o.status.success());
    let rows = rounds(&out);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].round, 0);
    assert!(rows[0].accuracy > 0.0);
}

#[test]
fn too_many_pathological_clients_is_infeasible() {
    let d = tempfile::tempdir().unwrap();
    let prefix = world(d.path(), &["--classes", "5"]);
    let o = cachefed(&["train", "--data", p(&prefix), "--clients", "10", "--partition", "pat", "--out", p(d.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("infeasible"));
}

#[test]
fn missing_files_exit_with_io_code() {
    let d = tempfile::tempdir().unwrap();
    let o = cachefed(&["train", "--data", p(&d.path().join("nothing")), "--out", p(d.path())]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn bad_thread_setting_is_rejected() {
    let o = Command::new(env!("CARGO_BIN_EXE_cachefed"))
        .args(["convergence", "--horizon", "10", "--runs", "1"])
        .env("CACHEFED_THREADS", "lots")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn extracted_feature_files_train_end_to_end() {
    let d = tempfile::tempdir().unwrap();
    let w = generate_world(&SynthSpec {
        num_classes: 2,
        feature_dim: 16,
        train_per_class: 8,
        seed: 4,
        ..SynthSpec::default()
    })
    .unwrap();
    let prefix = d.path().join("toy");
    write_features(&d.path().join("toy.features.cff"), &w.real_train, &w.catalog).unwrap();
    write_text_head(&d.path().join("toy.text.cff"), &w.text_head, &w.catalog).unwrap();
    let out = d.path().join("run");
    let o = cachefed(&[
        "train", "--data", p(&prefix), "--clients", "2", "--rounds", "5", "--shots", "4", "--out", p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(rounds(&out).len(), 6);
}

fn resolved_block(o: &Output) -> String {
    let text = stdout(o);
    let start = text.find("# resolved configuration").unwrap();
    let end = text.find("# end configuration").unwrap();
    text[start..end].to_string()
}

#[test]
fn flags_override_config_and_printed_config_reproduces_the_run() {
    let d = tempfile::tempdir().unwrap();
    let prefix = world(d.path(), &[]);
    let cfg = d.path().join("c.toml");
    std::fs::write(&cfg, "[train]\nrounds = 5\nlr = 0.25\npartition = \"dir\"\nclients-per-round = 3\n").unwrap();
    let first = d.path().join("first");
    let o = cachefed(&[
        "train", "--config", p(&cfg), "--data", p(&prefix), "--rounds", "3", "--out", p(&first),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let block = resolved_block(&o);
    assert!(block.contains("rounds = 3"));
    assert!(block.contains("lr = 0.25"));
    assert!(block.contains("seed = 0"));
    assert_eq!(rounds(&first).len(), 4);

    let replay_cfg = d.path().join("replay.toml");
    let second = d.path().join("second");
    let replay = block.replace(&format!("out = \"{}\"", p(&first)), &format!("out = \"{}\"", p(&second)));
    std::fs::write(&replay_cfg, replay).unwrap();
    let o = cachefed(&["train", "--config", p(&replay_cfg)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read(first.join("rounds.csv")).unwrap(),
        std::fs::read(second.join("rounds.csv")).unwrap()
    );
}

#[test]
fn unknown_config_keys_are_rejected() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("c.toml");
    std::fs::write(&cfg, "[convergence]\nhorizn = 5\n").unwrap();
    let o = cachefed(&["convergence", "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn help_documents_formats_and_defaults() {
    for sub in ["gen-synth", "train", "convergence", "partition"] {
        let o = cachefed(&[sub, "--help"]);
        let text = stdout(&o);
        assert!(text.contains("CFF1"), "{sub}");
        assert!(text.contains("Exit codes"), "{sub}");
        assert!(text.contains("[default:"), "{sub}");
    }
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(dir.join("convergence.json")).unwrap()).unwrap()
}

#[test]
fn partial_participation_shows_a_sampling_term() {
    let d = tempfile::tempdir().unwrap();
    let o = cachefed(&[
        "convergence", "--participation", "5/10", "--horizon", "500", "--runs", "4", "--resamples", "200", "--out",
        p(d.path()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(d.path());
    assert!(s["constants"]["c"].as_f64().unwrap() > 0.0);
    assert_eq!(s["violations"].as_u64(), Some(0));
    let lines = std::fs::read_to_string(d.path().join("convergence.csv")).unwrap();
    assert_eq!(lines.lines().nth(1), Some("t,mean_gap,bound,violation_flag"));
    assert_eq!(lines.lines().count(), 502);
}

#[test]
fn noiseless_homogeneous_problem_has_zero_b() {
    let d = tempfile::tempdir().unwrap();
    let o = cachefed(&[
        "convergence", "--sigma", "0", "--heterogeneity", "0", "--horizon", "200", "--runs", "2", "--out", p(d.path()),
    ]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("B = 0.000000e0"));
    assert_eq!(summary(d.path())["constants"]["b"].as_f64(), Some(0.0));
}

#[test]
fn oversized_steps_exit_with_divergence_code() {
    let d = tempfile::tempdir().unwrap();
    let o = cachefed(&[
        "convergence", "--lr-scale", "100", "--gamma", "0", "--horizon", "500", "--runs", "1", "--out", p(d.path()),
    ]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("eta_1"));
}

#[test]
fn participation_must_agree_with_client_count() {
    let o = cachefed(&["convergence", "--participation", "5/10", "--clients", "8", "--horizon", "10"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn partition_command_splits_one_hundred_classes() {
    let d = tempfile::tempdir().unwrap();
    let prefix = world(d.path(), &["--classes", "100", "--dim", "16", "--test-per-class", "1"]);
    let out = d.path().join("part");
    let o = cachefed(&["partition", "--data", p(&prefix), "--scheme", "pat", "--clients", "10", "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("heterogeneity.json")).unwrap()).unwrap();
    for h in report["histograms"].as_array().unwrap() {
        let held = h.as_array().unwrap().iter().filter(|c| c.as_u64() != Some(0)).count();
        assert_eq!(held, 10);
    }
    let text = std::fs::read_to_string(out.join("partition.txt")).unwrap();
    assert_eq!(text.lines().count(), 10);
    let sidecar: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("partition.json")).unwrap()).unwrap();
    assert_eq!(sidecar["n"].as_u64(), Some(1600));
}
