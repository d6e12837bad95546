use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn ecgid(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ecgid"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = ecgid(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn small_cohort(dir: &Path) {
    ok(dir, &["gen", "--subjects", "4", "--rest-s", "40", "--ex-s", "30", "--seed", "3", "--out", "cohort"]);
    std::fs::write(dir.join("qrs.cfg"), "feature=qrs30\nreduction=pca\npca_variance=0.99\n").unwrap();
}

#[test]
fn gen_writes_two_entries_per_subject() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["gen", "--subjects", "45", "--rest-s", "2", "--ex-s", "2", "--seed", "7", "--out", "d"]);
    let manifest = std::fs::read_to_string(tmp.path().join("d/manifest.txt")).unwrap();
    let entries: Vec<&str> = manifest.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()).collect();
    assert_eq!(entries.len(), 90);
    assert_eq!(entries.iter().filter(|l| l.contains(",post_exercise,")).count(), 45);
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    small_cohort(tmp.path());
    let bad = ecgid(tmp.path(), &["run", "--manifest", "cohort", "--config", "qrs.cfg", "--protocol", "rest_walk"]);
    assert_eq!(bad.status.code(), Some(1));
    let err = String::from_utf8_lossy(&bad.stderr);
    assert!(err.contains("rest_walk") && err.contains("ecgid run"), "{err}");

    assert_eq!(ecgid(tmp.path(), &["run", "--bogus"]).status.code(), Some(1));
    assert_eq!(ecgid(tmp.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(ecgid(tmp.path(), &["--help"]).status.code(), Some(0));

    let missing = ecgid(tmp.path(), &["run", "--manifest", "nowhere", "--config", "qrs.cfg", "--protocol", "rest_ex"]);
    assert_eq!(missing.status.code(), Some(2));
    std::fs::write(tmp.path().join("bad.cfg"), "feature=wavelets\n").unwrap();
    let cfg = ecgid(tmp.path(), &["run", "--manifest", "cohort", "--config", "bad.cfg", "--protocol", "rest_ex"]);
    assert_eq!(cfg.status.code(), Some(1));
    std::fs::write(tmp.path().join("junk.rec"), "fs=300\n1.0\nnope\n").unwrap();
    assert_eq!(ecgid(tmp.path(), &["detect", "--record", "junk.rec"]).status.code(), Some(2));
}

#[test]
fn repeated_invocations_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    small_cohort(d);
    ok(d, &["gen", "--subjects", "4", "--rest-s", "40", "--ex-s", "30", "--seed", "3", "--out", "again"]);
    for f in ["manifest.txt", "s01_rest.txt", "s04_post_exercise.txt"] {
        let a = std::fs::read(d.join("cohort").join(f)).unwrap_or_else(|e| panic!("{f}: {e}"));
        assert_eq!(a, std::fs::read(d.join("again").join(f)).unwrap(), "{f}");
    }

    let run = ["run", "--manifest", "cohort", "--config", "qrs.cfg", "--protocol", "rest_rest"];
    let a = ok(d, &run).stdout;
    assert_eq!(a, ok(d, &run).stdout);
    assert!(String::from_utf8_lossy(&a).starts_with("pipeline,protocol,train_acc_pct,test_acc_pct"));

    let detect = ["detect", "--record", "cohort/s02_rest.txt"];
    let peaks = ok(d, &detect).stdout;
    assert!(peaks.len() > 10);
    assert_eq!(peaks, ok(d, &detect).stdout);

    ok(d, &["featurize", "--manifest", "cohort", "--layout", "qrs30", "--out", "f1.txt"]);
    ok(d, &["featurize", "--manifest", "cohort", "--layout", "qrs30", "--out", "f2.txt"]);
    assert_eq!(std::fs::read(d.join("f1.txt")).unwrap(), std::fs::read(d.join("f2.txt")).unwrap());

    ok(d, &["run", "--manifest", "cohort", "--config", "qrs.cfg", "--protocol", "rest_ex", "--out", "r1.csv"]);
    ok(d, &["run", "--manifest", "cohort", "--config", "qrs.cfg", "--protocol", "rest_rest", "--out", "r2.csv"]);
    let merged = ok(d, &["report", "r1.csv", "r2.csv", "--format", "markdown"]).stdout;
    assert_eq!(merged, ok(d, &["report", "r2.csv", "r1.csv", "--format", "markdown"]).stdout);
    assert_eq!(String::from_utf8_lossy(&merged).lines().count(), 4);

    std::fs::write(d.join("kl.cfg"), "feature=fused_kl\nkl_lambda=0.3\n").unwrap();
    let sweep = ["sweep", "--manifest", "cohort", "--config", "kl.cfg", "--protocol", "rest_ex", "--top-n", "5,20"];
    let s = ok(d, &sweep).stdout;
    assert_eq!(s, ok(d, &sweep).stdout);
    // two sweep rows plus the unselected baseline
    assert_eq!(String::from_utf8_lossy(&s).lines().count(), 4);
}

#[test]
fn select_writes_weights() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    small_cohort(d);
    ok(d, &["featurize", "--manifest", "cohort", "--layout", "qrs30", "--out", "f.txt"]);
    ok(d, &["select", "--features", "f.txt", "--top-n", "5", "--out", "w1.txt"]);
    ok(d, &["select", "--features", "f.txt", "--top-n", "5", "--out", "w2.txt"]);
    let w = std::fs::read(d.join("w1.txt")).unwrap();
    assert!(!w.is_empty());
    assert_eq!(w, std::fs::read(d.join("w2.txt")).unwrap());
    let both = ecgid(d, &["select", "--features", "f.txt", "--top-n", "5", "--threshold", "0.1", "--out", "w3.txt"]);
    assert_eq!(both.status.code(), Some(1));
}
