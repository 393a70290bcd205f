use std::path::Path;
use std::process::{Command, Output};

fn hsvae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hsvae")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = hsvae(args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["synth", "--classes", "2", "--seed", "7", "--out", p(&a)]);
    ok(&["synth", "--classes", "2", "--seed", "7", "--out", p(&b)]);
    let fa = std::fs::read(a.join("synth.tsv")).unwrap();
    assert!(!fa.is_empty());
    assert_eq!(fa, std::fs::read(b.join("synth.tsv")).unwrap());
    assert_eq!(std::fs::read(a.join("synth.json")).unwrap(), std::fs::read(b.join("synth.json")).unwrap());
    ok(&["synth", "--classes", "2", "--seed", "8", "--out", p(&b)]);
    assert_ne!(fa, std::fs::read(b.join("synth.tsv")).unwrap());
}

#[test]
fn malformed_config_exits_1_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.ini");
    std::fs::write(&cfg, "[model]\nlatent_dim = 8\n[train]\nlearnin_rate = 0.01\n").unwrap();
    let out = hsvae(&["--config", p(&cfg), "synth", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("learnin_rate"), "{err}");

    std::fs::write(&cfg, "[data]\nshared_fraction = lots\n").unwrap();
    let out = hsvae(&["--config", p(&cfg), "synth", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("shared_fraction"));
}

#[test]
fn usage_and_contract_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(hsvae(&["--help"]).status.code(), Some(0));
    assert_eq!(hsvae(&["frobnicate"]).status.code(), Some(1));
    let missing = dir.path().join("nope.ckpt");
    let out = hsvae(&["eval-hoyer", "--checkpoint", p(&missing), "--data", p(&missing), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_file_values_reach_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.ini");
    std::fs::write(&cfg, "[data]\nclasses = 3\nsentences_per_class = 4\n").unwrap();
    ok(&["--config", p(&cfg), "synth", "--out", p(dir.path())]);
    let text = std::fs::read_to_string(dir.path().join("synth.tsv")).unwrap();
    assert_eq!(text.lines().count(), 12);
    // Flags override the file.
    ok(&["--config", p(&cfg), "synth", "--sentences-per-class", "2", "--out", p(dir.path())]);
    assert_eq!(std::fs::read_to_string(dir.path().join("synth.tsv")).unwrap().lines().count(), 6);
}

#[test]
fn train_then_eval_hoyer_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--classes", "2", "--sentences-per-class", "60", "--seed", "3", "--out", p(d)]);
    let run = d.join("run");
    let data = d.join("synth.tsv");
    let train = [
        "train", "--data", p(&data), "--variant", "HSVAE", "--alpha", "8", "--beta", "2",
        "--epochs", "2", "--latent-dim", "4", "--hidden-dim", "8", "--embed-dim", "8", "--out", p(&run),
    ];
    ok(&train);
    for f in ["model.ckpt", "vocab.txt", "train_log.jsonl", "checkpoints/epoch-001.ckpt", "checkpoints/epoch-002.ckpt"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let log = std::fs::read_to_string(run.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["objective"].as_f64().unwrap().is_finite());
    }

    ok(&["eval-hoyer", "--checkpoint", p(&run.join("model.ckpt")), "--data", p(&data), "--out", p(&run)]);
    let rec: serde_json::Value =
        serde_json::from_str(std::fs::read_to_string(run.join("hoyer.jsonl")).unwrap().lines().next().unwrap()).unwrap();
    let ah = rec["average_hoyer"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&ah));
    assert_eq!(rec["num_codes"], 120);
    assert_eq!(rec["mode"], "posterior-sample");
    assert_eq!(rec["variant"], "HSVAE");

    // Identical inputs and seed give identical artifacts.
    let again = d.join("again");
    let mut train2 = train;
    train2[train2.len() - 1] = p(&again);
    ok(&train2);
    assert_eq!(std::fs::read(run.join("model.ckpt")).unwrap(), std::fs::read(again.join("model.ckpt")).unwrap());
    assert_eq!(log, std::fs::read_to_string(again.join("train_log.jsonl")).unwrap());
}

#[test]
fn downstream_subcommands_write_their_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--classes", "2", "--sentences-per-class", "40", "--out", p(d)]);
    let data = d.join("synth.tsv");
    ok(&["train", "--data", p(&data), "--epochs", "1", "--latent-dim", "4", "--hidden-dim", "8", "--out", p(d)]);
    let ckpt = d.join("checkpoints/epoch-001.ckpt");

    ok(&["classify", "--checkpoint", p(&ckpt), "--data", p(&data), "--train-per-class", "20", "--eval-per-class", "5", "--epochs", "1", "--out", p(d)]);
    let acc = std::fs::read_to_string(d.join("accuracy.jsonl")).unwrap();
    let test: serde_json::Value = serde_json::from_str(acc.lines().last().unwrap()).unwrap();
    assert_eq!(test["split"], "test");
    assert_eq!(test["K"], 5);
    assert_eq!(std::fs::read_to_string(d.join("splits.jsonl")).unwrap().lines().count(), 2 * 30);

    ok(&["analyze-gamma", "--checkpoint", p(&ckpt), "--data", p(&data), "--out", p(d)]);
    let csv = std::fs::read_to_string(d.join("gamma_class.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "class,0,1,2,3");
    assert_eq!(csv.lines().count(), 3);

    ok(&["class-kl", "--data", p(&data), "--out", p(d)]);
    assert_eq!(std::fs::read_to_string(d.join("class_kl.csv")).unwrap().lines().count(), 3);

    ok(&["demo-decode", "--checkpoint", p(&ckpt), "--count", "2", "--max-len", "6", "--out", p(d)]);
    let decoded = std::fs::read_to_string(d.join("decoded.txt")).unwrap();
    assert_eq!(decoded.lines().count(), 2);
    assert!(decoded.lines().all(|l| l.starts_with("prior\t") && l.split_whitespace().count() <= 7));

    ok(&["preprocess", "--input", p(&data), "--out", p(&d.join("pre"))]);
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("pre/preprocess.json")).unwrap()).unwrap();
    assert_eq!(rep["sentences"], 80);
}

#[test]
fn resume_continues_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--sentences-per-class", "30", "--out", p(d)]);
    let data = d.join("synth.tsv");
    let args = ["--data", p(&data), "--latent-dim", "4", "--hidden-dim", "8", "--out", p(d)];
    ok(&[&["train", "--epochs", "1"], &args[..]].concat());
    ok(&["train", "--resume", p(&d.join("checkpoints/epoch-001.ckpt")), "--data", p(&data), "--epochs", "2", "--out", p(d)]);
    let log = std::fs::read_to_string(d.join("train_log.jsonl")).unwrap();
    let epochs: Vec<u64> = log.lines().map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["epoch"].as_u64().unwrap()).collect();
    assert_eq!(epochs, [1, 2]);
}

#[test]
fn gradcheck_subcommand_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["gradcheck", "--out", p(dir.path())]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("gradient checks passed"));
    let lines = std::fs::read_to_string(dir.path().join("gradcheck.jsonl")).unwrap();
    assert!(lines.lines().count() >= 30);
}
