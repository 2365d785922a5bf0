use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_fedcctr");
const SMOKE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/smoke.toml");

// small enough for a debug-profile test run
const TINY: [&str; 14] = [
    "--set",
    "data.synthetic.users=30",
    "--set",
    "data.synthetic.items_per_domain=40",
    "--set",
    "data.synthetic.sparsity=0.75",
    "--set",
    "federation.rounds=3",
    "--set",
    "model.mlp_hidden=[8]",
    "--set",
    "federation.rho=0.5",
    "--set",
    "eval.negatives=10",
];

fn fedcctr(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn with_tiny(mut args: Vec<&str>) -> Vec<&str> {
    args.extend(["--config", SMOKE]);
    args.extend(TINY);
    args
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = fedcctr(&with_tiny(vec!["generate", "--out", path(out)]));
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["interactions.jsonl", "stats.json", "config.toml"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let stats = std::fs::read_to_string(a.join("stats.json")).unwrap();
    assert!(stats.contains("avg_seq_len_a"));
}

#[test]
fn invalid_sparsity_exits_2_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let o = fedcctr(&["generate", "--out", path(dir.path()), "--set", "data.synthetic.sparsity=1.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("synthetic.sparsity"));
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[federation]\nroundz = 3\n").unwrap();
    let o = fedcctr(&["train", "--config", path(&cfg), "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_checkpoint_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let o = fedcctr(&with_tiny(vec!["evaluate", "--checkpoint", path(&missing), "--out", path(dir.path())]));
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn augment_train_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    let eval = dir.path().join("eval");
    assert!(fedcctr(&with_tiny(vec!["generate", "--out", path(&data)])).status.success());
    let o = fedcctr(&with_tiny(vec!["augment", "--data", path(&data), "--out", path(&data)]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(data.join("augmented").join("users.jsonl").exists());

    let o = fedcctr(&with_tiny(vec!["train", "--data", path(&data), "--out", path(&run), "--static-ldp", "--set", "privacy.enabled=true", "--set", "privacy.epsilon=50"]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let echoed = std::fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(echoed.contains("decay = 1.0"));
    assert!(run.join("traces").read_dir().unwrap().next().is_some());

    let ck = run.join("checkpoint.json");
    let o = fedcctr(&with_tiny(vec!["evaluate", "--checkpoint", path(&ck), "--data", path(&data), "--out", path(&eval)]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(eval.join("metrics.csv")).unwrap();
    // header plus K in {2, 5, 10} for each domain
    assert_eq!(csv.lines().count(), 7);
}

#[test]
fn no_privacy_flag_writes_no_traces() {
    let dir = tempfile::tempdir().unwrap();
    let o = fedcctr(&with_tiny(vec!["train", "--out", path(dir.path()), "--no-privacy", "--set", "augment.enabled=false"]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("traces").read_dir().unwrap().next().is_none());
    let echoed = std::fs::read_to_string(dir.path().join("config.toml")).unwrap();
    assert!(echoed.contains("[privacy]\nenabled = false"));
}

#[test]
fn conflicting_privacy_flags_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = fedcctr(&["train", "--out", path(dir.path()), "--no-privacy", "--static-ldp"]);
    assert_eq!(o.status.code(), Some(2));
}
