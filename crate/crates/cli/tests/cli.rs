use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mixf_cli::config::RunConfig;
use mixf_cli::run::{RunReport, SweepPlan};

fn mixf(args: &[&str], out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mixf"));
    cmd.args(args).env("RUST_LOG", "warn");
    match out {
        Some(dir) => cmd.env("MIXF_OUT", dir),
        None => cmd.env_remove("MIXF_OUT"),
    };
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Small synthetic task so each command finishes quickly.
fn small_task(dir: &Path) -> PathBuf {
    let o = mixf(
        &["gen-synthetic", "--out-dir", dir.to_str().unwrap(), "--train-size", "300", "--dev-size", "100"],
        None,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    dir.join("config.json")
}

#[test]
fn train_writes_report_and_eval_reproduces_it() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_task(&tmp.path().join("task"));
    let out = tmp.path().join("run");
    let o = mixf(&["train", "-c", config.to_str().unwrap()], Some(&out));
    assert!(o.status.success(), "{}", stderr(&o));
    let report = RunReport::read(&out.join("run.json")).unwrap();
    assert_eq!(report.epochs.len(), 3);
    assert_eq!(report.final_metric, report.epochs[2].dev_metric.value);
    assert_eq!(report.config_hash, report.config.hash());
    assert!(out.join("params.mixf").exists() && out.join("vocab.json").exists());

    let params = out.join("params.mixf");
    let o = mixf(&["eval", "-c", config.to_str().unwrap(), "--params", params.to_str().unwrap()], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let printed: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let last = &report.epochs[2].dev_metric;
    assert_eq!(printed["metric"], last.metric.as_str());
    assert_eq!(printed["value"].as_f64().unwrap().to_bits(), last.value.to_bits());
    assert_eq!(printed["n"], 100);
}

#[test]
fn seed_flag_beats_config() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_task(&tmp.path().join("task"));
    let out = tmp.path().join("run");
    let o = mixf(
        &["train", "-c", config.to_str().unwrap(), "--seed", "77", "--set", "train.epochs=1"],
        Some(&out),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let report = RunReport::read(&out.join("run.json")).unwrap();
    assert_eq!(report.seed, 77);
    assert_eq!(report.config.seed, 77);
    assert_eq!(report.epochs.len(), 1);
}

#[test]
fn input_errors_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_task(&tmp.path().join("task"));
    let c = config.to_str().unwrap();

    let o = mixf(&["train", "-c", c, "--set", "paths.train=nowhere.tsv"], Some(tmp.path()));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere.tsv"), "{}", stderr(&o));

    let o = mixf(&["train", "-c", c, "--set", "model.bogus=1"], Some(tmp.path()));
    assert_eq!(o.status.code(), Some(2));

    let o = mixf(&["train", "-c", c, "--fraction", "0"], Some(tmp.path()));
    assert_eq!(o.status.code(), Some(2));

    let o = mixf(&["train"], None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_rejects_mismatched_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_task(&tmp.path().join("task"));
    let c = config.to_str().unwrap();
    let out = tmp.path().join("run");
    assert!(mixf(&["train", "-c", c, "--set", "train.epochs=1"], Some(&out)).status.success());
    let params = out.join("params.mixf");

    // a vocabulary of a different size than the saved embedding table
    let vocab: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("vocab.json")).unwrap()).unwrap();
    let mut tokens = vocab["tokens"].as_array().unwrap().clone();
    let saved = tokens.len();
    tokens.push("extra-token".into());
    let bigger = serde_json::json!({"min_count": 1, "max_size": 30000, "tokens": tokens});
    let vpath = tmp.path().join("bigger.json");
    fs::write(&vpath, bigger.to_string()).unwrap();
    let o = mixf(
        &["eval", "-c", c, "--params", params.to_str().unwrap(), "--vocab", vpath.to_str().unwrap()],
        None,
    );
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains(&format!("[{}, 32]", saved + 1)) && msg.contains(&format!("[{saved}, 32]")), "{msg}");

    let empty = tmp.path().join("empty.tsv");
    fs::write(&empty, "sentence\tlabel\n").unwrap();
    let o = mixf(
        &["eval", "-c", c, "--params", params.to_str().unwrap(), "--dev", empty.to_str().unwrap()],
        None,
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let junk = tmp.path().join("junk.mixf");
    fs::write(&junk, b"NOTMIXF").unwrap();
    let o = mixf(
        &["eval", "-c", c, "--params", junk.to_str().unwrap(), "--vocab", out.join("vocab.json").to_str().unwrap()],
        None,
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gradcheck_passes_and_flags_corruption() {
    let o = mixf(&["gradcheck"], None);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let o = mixf(&["gradcheck", "--corrupt", "softmax_rows"], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("softmax_rows"));
    let o = mixf(&["gradcheck", "--corrupt", "no_such_op"], None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn single_fraction_sweep_has_two_cells_and_a_delta() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_task(&tmp.path().join("task"));
    let out = tmp.path().join("sweep");
    let o = mixf(
        &["sweep", "-c", config.to_str().unwrap(), "--fractions", "1.0", "--seeds", "4", "--set", "train.epochs=2"],
        Some(&out),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "task,fraction,arm,seed,metric,status");
    assert_eq!(lines.len(), 4, "{csv}");
    assert!(lines[1].starts_with("synthetic,1,baseline,4,"));
    assert!(lines[2].starts_with("synthetic,1,mixup,4,"));
    assert!(lines[3].starts_with("synthetic,1,delta,,"));
    let runs: Vec<_> = fs::read_dir(out.join("runs")).unwrap().collect();
    assert_eq!(runs.len(), 2);
}

#[test]
fn failing_cells_are_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_task(&tmp.path().join("task"));
    let out = tmp.path().join("sweep");
    // a huge learning rate without clipping diverges to a non-finite loss
    let o = mixf(
        &[
            "sweep", "-c", config.to_str().unwrap(), "--fractions", "1.0", "--arms", "baseline",
            "--set", "train.learning_rate=1e300", "--set", "train.grad_clip_norm=null", "--set", "train.epochs=1",
        ],
        Some(&out),
    );
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().ends_with(",error"), "{csv}");
}

#[test]
fn config_schema_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_task(&tmp.path().join("task"));
    let loaded = RunConfig::load(&config, &[], None).unwrap();
    assert!(loaded.paths.train.is_absolute() || loaded.paths.train.starts_with(tmp.path()));
    assert_eq!(loaded.train.batch_size, 8);
    assert_eq!(SweepPlan::default_fractions().len(), 10);
    assert_eq!(SweepPlan::default_fractions()[9], 1.0);
}
