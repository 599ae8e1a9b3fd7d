use std::path::Path;
use std::process::{Command, Output};

fn mew(args: &[&str], extra: &[&Path]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mew"));
    cmd.args(args);
    for p in extra {
        cmd.arg(p);
    }
    cmd.output().unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn synth_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    stdout(&mew(&["synth", "--count", "10", "--extent", "32", "--channels", "1", "--out"], &[&data]));
    let manifest = data.join("manifest.tsv");
    assert!(std::fs::read_to_string(&manifest).unwrap().starts_with("# seed=0"));

    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "preset=isic\nmodel=toy\nepochs=2\nbatch_size=4\n").unwrap();
    let run = dir.path().join("run");
    let log = stdout(&mew(
        &["train", "--lr", "0.002", "--config"],
        &[&cfg, Path::new("--manifest"), &manifest, Path::new("--out"), &run],
    ));
    assert_eq!(log.lines().count(), 3, "{log}");
    assert_eq!(log, std::fs::read_to_string(run.join("train.log")).unwrap());
    let saved = std::fs::read_to_string(run.join("config.txt")).unwrap();
    assert!(saved.contains("lr=0.002") && saved.contains("epochs=2"), "{saved}");

    let json = dir.path().join("m.json");
    let pred = dir.path().join("pred");
    let tsv = stdout(&mew(
        &["eval", "--split", "test", "--checkpoint"],
        &[&run.join("best.ckpt"), Path::new("--manifest"), &manifest, Path::new("--json"), &json, Path::new("--export"), &pred],
    ));
    assert!(tsv.starts_with("class\tmIoU\tDSC\tAcc\tSpe\tSen\tHD95\n"), "{tsv}");
    assert!(tsv.lines().last().unwrap().starts_with("mean\t"));
    let report = std::fs::read_to_string(&json).unwrap();
    assert!(report.contains("\"DSC\""));
    assert_eq!(std::fs::read_dir(&pred).unwrap().count(), 3);
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let missing = mew(&["train", "--epochs", "1", "--manifest"], &[&dir.path().join("nope.tsv")]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope.tsv"));
    assert!(missing.stdout.is_empty());

    assert!(!mew(&["train", "--optimizer", "adam"], &[]).status.success());
    assert!(!mew(&["train", "--branches", "hw,xy"], &[]).status.success());
    assert!(!mew(&["eval", "--split", "holdout", "--checkpoint", "a", "--manifest", "b"], &[]).status.success());
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "learning_rate=1\n").unwrap();
    let o = mew(&["train", "--config"], &[&cfg]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rate"));
}

#[test]
fn fftcheck_and_gradcheck_report_lines() {
    let out = stdout(&mew(&["fftcheck", "--max-len", "20", "--trials", "3"], &[]));
    assert!(out.lines().count() >= 10);
    assert!(out.lines().all(|l| l.starts_with("PASS\t")), "{out}");
    let out = stdout(&mew(&["gradcheck", "--ops-only"], &[]));
    assert!(out.lines().all(|l| l.starts_with("PASS\t")), "{out}");
    assert!(out.contains("MEWB"));
}
