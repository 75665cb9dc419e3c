use std::path::Path;
use std::process::{Command, Output};

fn selftalk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_selftalk")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_corpus(dir: &Path, waveforms: bool) {
    let mut args = vec![
        "gen-synth", "--well-separated", "--seed", "3", "--n-sessions", "4", "--participants", "4",
        "--utterances-per-session", "24", "--out", p(dir),
    ];
    if waveforms {
        args.push("--waveforms");
    }
    let o = selftalk(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn latency_prints_default_profile() {
    let o = selftalk(&["latency"]);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    assert!(s.contains("full: 6334.7 ms"), "{s}");
    assert!(s.contains("early-exit: 3712.4 ms"), "{s}");
    assert!(s.contains("reduction: 41.4%"), "{s}");
}

#[test]
fn exit_codes() {
    assert_eq!(selftalk(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(selftalk(&["segment"]).status.code(), Some(1));
    assert_eq!(selftalk(&["segment", "/nonexistent/a.wav"]).status.code(), Some(2));
    assert_eq!(selftalk(&["cache-sim", "--manifest", "/nonexistent/m.jsonl"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path(), true);
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let backend = format!("tcp://127.0.0.1:{port}");
    let o = selftalk(&[
        "train", "--manifest", p(&dir.path().join("manifest.jsonl")), "--audio-dir", p(dir.path()),
        "--backend", &backend, "--timeout-s", "1", "--out", p(&dir.path().join("models")),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn synth_segment_and_cache() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path(), true);
    let manifest = dir.path().join("manifest.jsonl");
    let records = std::fs::read_to_string(&manifest).unwrap().lines().count();
    assert_eq!(records, 4 * 24);

    let wav = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "wav"))
        .unwrap();
    let o = selftalk(&["segment", p(&wav)]);
    assert!(o.status.success());
    let segs: Vec<serde_json::Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(!segs.is_empty() && segs.len() <= 24, "{} segments", segs.len());
    for w in segs.windows(2) {
        assert!(w[0]["t_end"].as_f64().unwrap() <= w[1]["t_start"].as_f64().unwrap());
    }

    let o = selftalk(&["cache-sim", "--manifest", p(&manifest)]);
    assert!(o.status.success());
    assert!(!stdout(&o).is_empty());
}

#[test]
fn featurize_then_promptgen() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path(), true);
    let manifest = dir.path().join("manifest.jsonl");
    let features = dir.path().join("features.jsonl");
    let o = selftalk(&["featurize", "--manifest", p(&manifest), "--audio-dir", p(dir.path()), "--out", p(&features)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let prompts = dir.path().join("prompts");
    let o = selftalk(&[
        "promptgen", "--manifest", p(&manifest), "--features", p(&features), "--template", "multi-few",
        "--shots", "1", "--out", p(&prompts),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let files: Vec<_> = std::fs::read_dir(&prompts).unwrap().collect();
    assert_eq!(files.len(), 4 * 24);
    let one = std::fs::read_to_string(files[0].as_ref().unwrap().path()).unwrap();
    assert!(one.ends_with("Classification:\n"));
    assert_eq!(one.matches("Here are a few examples:").count(), 2);
}

#[test]
fn transcribe_eval_lists_every_strategy() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path(), false);
    let o = selftalk(&["transcribe-eval", "--corpus", p(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = stdout(&o);
    for name in ["single", "prior-sound", "no-temporal", "no-quantity", "contextual"] {
        assert!(s.contains(name), "{name} missing from\n{s}");
    }
}

#[test]
fn eval_writes_reports_and_latency_reads_traces() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path(), false);
    let out = dir.path().join("eval");
    let o = selftalk(&[
        "eval", "--corpus", p(dir.path()), "--max-epochs", "8", "--sweep", "3", "--out", p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["folds.csv", "per_class.csv", "per_participant.csv", "traces.jsonl", "frontier.csv", "summary.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let folds = std::fs::read_to_string(out.join("folds.csv")).unwrap();
    assert_eq!(folds.lines().count(), 1 + 4);

    let o = selftalk(&["latency", "--traces", p(&out.join("traces.jsonl")), "--json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v.is_object());
}

#[test]
fn identical_arguments_give_identical_files() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        small_corpus(d.path(), false);
        let o = selftalk(&["eval", "--corpus", p(d.path()), "--max-epochs", "4", "--out", p(&d.path().join("eval"))]);
        assert!(o.status.success());
    }
    for f in ["manifest.jsonl", "synth_config.json", "eval/folds.csv", "eval/traces.jsonl", "eval/summary.json"] {
        let a = std::fs::read(dirs[0].path().join(f)).unwrap();
        let b = std::fs::read(dirs[1].path().join(f)).unwrap();
        assert!(a == b, "{f} differs between runs");
    }
}
