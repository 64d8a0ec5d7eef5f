//! End-to-end tests driving the `gntp` binary: synth/train/eval/decode
//! round trips, exit codes, and output determinism.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gntp(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gntp"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("failed to run gntp")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn synth_train_eval_decode_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    let out = gntp(
        &[
            "synth",
            "--generator",
            "separable:sentences=80,vocab=20,tags=4,max_len=6,seed=1",
            "--output",
            "train.tsv",
        ],
        dir,
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let out = gntp(
        &[
            "synth",
            "--generator",
            "separable:sentences=20,vocab=20,tags=4,max_len=6,seed=2",
            "--output",
            "dev.tsv",
        ],
        dir,
    );
    assert!(out.status.success(), "{}", stderr(&out));

    let out = gntp(
        &[
            "train",
            "--task",
            "tagging",
            "--train",
            "train.tsv",
            "--dev",
            "dev.tsv",
            "--model-out",
            "model.gntp",
            "--set",
            "epochs=4",
            "--set",
            "hidden=16",
            "--set",
            "dim=8",
            "--set",
            "beam=4",
            "--set",
            "seed=3",
            "--log",
            "train.log",
        ],
        dir,
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.join("model.gntp").exists());
    let log = fs::read_to_string(dir.join("train.log")).unwrap();
    assert!(log.lines().count() >= 4, "log too short:\n{log}");
    assert!(log.lines().all(|l| l.starts_with("epoch=")), "{log}");

    let out = gntp(
        &[
            "eval", "--model", "model.gntp", "--input", "dev.tsv", "--beam", "4",
        ],
        dir,
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let line = stdout(&out);
    assert!(line.starts_with("accuracy="), "{line}");
    let acc: f64 = line
        .split_whitespace()
        .next()
        .unwrap()
        .trim_start_matches("accuracy=")
        .parse()
        .unwrap();
    assert!(acc >= 99.0, "eval accuracy {acc}");

    let out = gntp(
        &[
            "decode", "--model", "model.gntp", "--input", "dev.tsv", "--output",
            "pred.tsv", "--beam", "4",
        ],
        dir,
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let pred = fs::read_to_string(dir.join("pred.tsv")).unwrap();
    // Same sentences, predicted tags: evaluating the predictions file
    // as gold against itself means forms line up with dev.tsv.
    let dev = fs::read_to_string(dir.join("dev.tsv")).unwrap();
    assert_eq!(pred.lines().count(), dev.lines().count());
}

#[test]
fn decode_is_thread_count_invariant() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = gntp(
        &[
            "synth",
            "--generator",
            "separable:sentences=40,vocab=15,tags=3,max_len=6,seed=7",
            "--output",
            "data.tsv",
        ],
        dir,
    );
    assert!(out.status.success());
    let out = gntp(
        &[
            "train",
            "--task",
            "tagging",
            "--train",
            "data.tsv",
            "--model-out",
            "m.gntp",
            "--set",
            "epochs=2",
            "--set",
            "hidden=8",
            "--set",
            "dim=4",
            "--set",
            "stage=local",
        ],
        dir,
    );
    assert!(out.status.success(), "{}", stderr(&out));
    for (threads, name) in [("1", "p1.tsv"), ("4", "p4.tsv")] {
        let out = gntp(
            &[
                "decode", "--model", "m.gntp", "--input", "data.tsv", "--output", name,
                "--beam", "2", "--threads", threads,
            ],
            dir,
        );
        assert!(out.status.success(), "{}", stderr(&out));
    }
    assert_eq!(
        fs::read(dir.join("p1.tsv")).unwrap(),
        fs::read(dir.join("p4.tsv")).unwrap()
    );
}

#[test]
fn gradcheck_reports_ok() {
    let tmp = tempfile::tempdir().unwrap();
    let out = gntp(&["gradcheck"], tmp.path());
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("ok: max relative error"), "{}", stdout(&out));
}

#[test]
fn labbias_prints_sweep_and_audit() {
    let tmp = tempfile::tempdir().unwrap();
    let out = gntp(&["labbias", "--trials", "200"], tmp.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("alpha"), "{text}");
    assert!(text.contains("20.0"), "{text}");
    assert!(text.contains("audit"), "{text}");
    assert!(text.contains("embedding"), "{text}");
}

#[test]
fn exit_codes_distinguish_usage_from_runtime_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    // Unknown flag: clap usage error.
    let out = gntp(&["decode", "--no-such-flag"], dir);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));

    // Unknown generator name: validation error.
    let out = gntp(
        &["synth", "--generator", "bogus:x=1", "--output", "o.tsv"],
        dir,
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));

    // Missing input file: runtime failure.
    let out = gntp(
        &["eval", "--model", "missing.gntp", "--input", "missing.tsv"],
        dir,
    );
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));

    // Malformed corpus: validation error.
    fs::write(dir.join("bad.tsv"), "1\tw\n").unwrap();
    let out = gntp(
        &[
            "train", "--task", "tagging", "--train", "bad.tsv", "--model-out", "m.gntp",
        ],
        dir,
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));

    // Malformed config value: validation error.
    fs::write(dir.join("good.tsv"), "1\tw\tt\n").unwrap();
    fs::write(dir.join("bad.cfg"), "epochs=soon\n").unwrap();
    let out = gntp(
        &[
            "train", "--task", "tagging", "--train", "good.tsv", "--config", "bad.cfg",
            "--model-out", "m.gntp",
        ],
        dir,
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn synth_writes_parseable_lookahead_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = gntp(
        &[
            "synth",
            "--generator",
            "lookahead:k=1,pairs=5,fillers=1,filler_vocab=20,calibrate=1,seed=3",
            "--output",
            "la.tsv",
        ],
        dir,
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(dir.join("la.tsv")).unwrap();
    // 5 blocks of 4 sentences (two ambiguous, two calibration).
    assert_eq!(text.split("\n\n").filter(|b| !b.trim().is_empty()).count(), 20);
}
