use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "corpus.songs = 3
corpus.sentences = 2
align.epochs = 4
align.fine_tune_epochs = 1
filter.threshold = 0
sing.steps = 20
synth.iterations = 8
synth.count = 2
";

const CHAIN: [&str; 11] = [
    "gen-corpus",
    "preprocess",
    "train-align",
    "fine-tune-align",
    "segment",
    "extract-duration",
    "filter",
    "stats",
    "train-sing",
    "synth",
    "eval",
];

fn cantor(workdir: &Path, config: Option<&Path>, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cantor"));
    cmd.arg("--workdir").arg(workdir);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    assert_eq!(cantor(w, None, &["no-such-stage"]).status.code(), Some(2));
    assert_eq!(cantor(w, None, &["--precision", "half", "stats"]).status.code(), Some(2));
    let bad = w.join("bad.cfg");
    std::fs::write(&bad, "align.epoch = 3\n").unwrap();
    let o = cantor(w, Some(&bad), &["stats"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("align.epoch"));
}

#[test]
fn stages_name_their_missing_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = cantor(dir.path(), None, &["extract-duration"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("aligner.ckpt"), "{}", stderr(&o));
    let o = cantor(dir.path(), None, &["preprocess"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("manifest.jsonl"));
}

#[test]
fn gen_corpus_writes_manifest_audio_and_truth() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.cfg");
    std::fs::write(&spec, "corpus.songs = 2\ncorpus.sentences = 1\n").unwrap();
    let out = dir.path().join("work");
    let o = Command::new(env!("CARGO_BIN_EXE_cantor"))
        .current_dir(dir.path())
        .args(["gen-corpus", "--spec", "spec.cfg", "--out", "work/"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let manifest = std::fs::read_to_string(out.join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 2);
    assert!(manifest.contains("\"truth\""));
    assert!(out.join("lexicon.txt").exists());
    assert!(out.join("song0100.wav").exists() && out.join("song0101.wav").exists());
}

fn run_chain(workdir: &Path, config: &Path) {
    for stage in CHAIN {
        let o = cantor(workdir, Some(config), &[stage]);
        assert_eq!(o.status.code(), Some(0), "{stage}: {}", stderr(&o));
    }
}

fn reports(workdir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(workdir.join("reports"))
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn rerunning_the_chain_reproduces_every_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.cfg");
    std::fs::write(&cfg, SMALL).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_chain(&a, &cfg);
    run_chain(&b, &cfg);
    let (ra, rb) = (reports(&a), reports(&b));
    let names: Vec<&str> = ra.iter().map(|(n, _)| n.as_str()).collect();
    for want in ["eval.json", "filter.jsonl", "stats.json", "synth.jsonl", "train-align.jsonl", "train-sing.json"] {
        assert!(names.contains(&want), "{names:?}");
    }
    assert_eq!(ra, rb);

    // A stage rerun in place is idempotent.
    let o = cantor(&a, Some(&cfg), &["eval"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(reports(&a), ra);

    let synth = std::fs::read_to_string(a.join("reports/synth.jsonl")).unwrap();
    for line in synth.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["frames"], v["duration_sum"]);
        assert_eq!(v["samples"].as_u64().unwrap(), v["frames"].as_u64().unwrap() * 256);
    }
}
