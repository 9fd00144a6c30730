use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn rgrec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rgrec"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Synthetic data plus a small configuration file in `dir`.
fn setup(dir: &Path) -> String {
    let data = dir.join("data");
    let o = rgrec(&["synth", "--out", data.to_str().unwrap(), "users=30", "items=60", "interactions_per_user=6"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let cfg = dir.join("run.conf");
    fs::write(
        &cfg,
        "# small smoke configuration
kg = data/kg_final.txt
ratings = data/ratings_final.txt
workspace = ws
strategy = rotate
num_rules = 8
embed.dim = 8
embed.steps = 60
embed.batch_size = 32
embed.negatives = 4
embed.learning_rate = 0.01
pretrain.learning_rate = 0.01
pretrain.max_epochs = 10
train.max_epochs = 3
train.dim = 4
train.fanout = 2
eval.repeats = 2
eval.negatives = 20
",
    )
    .unwrap();
    cfg.display().to_string()
}

#[test]
fn help_and_version_succeed() {
    let o = rgrec(&["--help"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("ablations"));
    assert_eq!(code(&rgrec(&["--version"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    let o = rgrec(&[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("Usage"));

    let o = rgrec(&["train"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--config"));

    let tmp = TempDir::new().unwrap();
    let cfg = setup(tmp.path());
    for args in [
        vec!["fit", "--config", &cfg],
        vec!["train", "--config", &cfg, "strategy=magic"],
        vec!["train", "--config", &cfg, "no_such_key=1"],
        vec!["train", "--config", &cfg, "max_rule_len=7"],
        vec!["train", "--config", &cfg, "--threads", "0"],
        vec!["train", "--config", "/nonexistent/run.conf"],
    ] {
        let o = rgrec(&args);
        assert_eq!(code(&o), 1, "{args:?}: {}", stderr(&o));
        assert!(stderr(&o).contains("Usage"), "{args:?}");
    }
}

#[test]
fn stages_run_in_order_and_report_metrics() {
    let tmp = TempDir::new().unwrap();
    let cfg = setup(tmp.path());
    let o = rgrec(&["mine", "--config", &cfg, "--no-deps"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("missing artifact"), "{}", stderr(&o));

    let o = rgrec(&["ingest", "--config", &cfg]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = rgrec(&["mine", "--config", &cfg, "--no-deps"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let o = rgrec(&["evaluate", "--config", &cfg, "--threads", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    for m in ["auc\t", "f1\t", "hits@5\t", "ndcg@10\t"] {
        assert!(out.contains(m), "{m} missing from {out}");
    }

    let o = rgrec(&["evaluate", "--config", &cfg, "--seed", "5", "--no-deps"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("stale artifact"), "{}", stderr(&o));
}

#[test]
fn thread_count_does_not_change_results() {
    let tmp = TempDir::new().unwrap();
    let cfg = setup(tmp.path());
    let a = rgrec(&["evaluate", "--config", &cfg, "--threads", "1", "workspace=w1"]);
    let b = rgrec(&["evaluate", "--config", &cfg, "--threads", "3", "workspace=w3"]);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(stdout(&a), stdout(&b));
    for f in ["model.bin", "rules.ranked.tsv", "weights.tsv"] {
        assert_eq!(
            fs::read(tmp.path().join("w1").join(f)).unwrap(),
            fs::read(tmp.path().join("w3").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn missing_input_and_divergence_have_distinct_codes() {
    let tmp = TempDir::new().unwrap();
    let cfg = setup(tmp.path());
    let o = rgrec(&["ingest", "--config", &cfg, "kg=missing.txt"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let o = rgrec(&["embed", "--config", &cfg, "strategy=transe", "embed.learning_rate=inf"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}
