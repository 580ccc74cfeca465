use std::path::Path;
use std::process::{Command, Output};

use procabs::blockworld::{stimulus_towers, Scene};

fn procabs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_procabs")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn gen_seq_counts_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, empty) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("e"));
    assert!(procabs(&["gen-seq", "--seed", "4", "--count", "49", "--out", p(&a)]).status.success());
    assert!(procabs(&["gen-seq", "--seed", "4", "--count", "49", "--out", p(&b)]).status.success());
    assert!(procabs(&["gen-seq", "--seed", "4", "--count", "0", "--out", p(&empty)]).status.success());
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 49);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(std::fs::read(&empty).unwrap().is_empty());
}

#[test]
fn learn_respects_the_size_penalty() {
    let dir = tempfile::tempdir().unwrap();
    let seqs = dir.path().join("seqs");
    assert!(procabs(&["gen-seq", "--count", "5", "--out", p(&seqs)]).status.success());

    let huge = dir.path().join("huge.json");
    assert!(procabs(&["learn", "--sequences", p(&seqs), "--w", "1000000", "--out", p(&huge)]).status.success());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&huge).unwrap()).unwrap();
    for s in v["sequences"].as_array().unwrap() {
        for t in s["trials"].as_array().unwrap() {
            assert!(t["library"].as_array().unwrap().is_empty());
        }
    }

    let low = dir.path().join("low.json");
    let again = dir.path().join("again.json");
    assert!(procabs(&["learn", "--sequences", p(&seqs), "--w", "1.5", "--out", p(&low)]).status.success());
    assert!(procabs(&["learn", "--sequences", p(&seqs), "--w", "1.5", "--out", p(&again)]).status.success());
    assert_eq!(std::fs::read(&low).unwrap(), std::fs::read(&again).unwrap());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&low).unwrap()).unwrap();
    for s in v["sequences"].as_array().unwrap() {
        assert!(!s["trials"][5]["library"].as_array().unwrap().is_empty());
    }
}

#[test]
fn learn_rejects_malformed_input() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad");
    std::fs::write(&bad, "{not json}\n").unwrap();
    let out = dir.path().join("out.json");
    let r = procabs(&["learn", "--sequences", p(&bad), "--out", p(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!out.exists());
    let r = procabs(&["learn", "--sequences", p(&dir.path().join("missing")), "--out", p(&out)]);
    assert_eq!(r.status.code(), Some(3));
}

#[test]
fn simulate_smoke_and_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let r = procabs(&["simulate", "--n-sequences", "1", "--iterations", "1", "--out-dir", p(&out)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let csv = std::fs::read_to_string(out.join("abstraction_proportions.csv")).unwrap();
    // 3 w values x 3 betas x 4 blocks, plus the header
    assert_eq!(csv.lines().count(), 1 + 36);
    for name in ["trace.json", "accuracy_efficiency.csv", "fragment_trajectory.csv", "jsd.csv"] {
        assert!(out.join(name).exists());
    }

    for (flag, value, field) in [
        ("--beta", "1.5", "beta"),
        ("--w", "-1", "w"),
        ("--iterations", "0", "iterations"),
        ("--jobs", "0", "jobs"),
    ] {
        let bad = dir.path().join(format!("bad{field}"));
        let r = procabs(&["simulate", "--n-sequences", "1", flag, value, "--out-dir", p(&bad)]);
        assert_eq!(r.status.code(), Some(2), "{flag} {value}");
        assert!(String::from_utf8_lossy(&r.stderr).contains(field));
        assert!(!bad.exists());
    }
    let r = procabs(&["simulate", "--size-rule", "bogus", "--out-dir", p(&dir.path().join("x"))]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn render_annotates_f1() {
    let dir = tempfile::tempdir().unwrap();
    let target = stimulus_towers()[0].as_scene();
    let scene = dir.path().join("scene.json");
    target.save(&scene).unwrap();
    let empty = dir.path().join("empty.json");
    Scene::empty(target.width, target.height).save(&empty).unwrap();

    let same = procabs(&["render", "--scene", p(&scene), "--built", p(&scene)]);
    assert!(String::from_utf8_lossy(&same.stdout).contains("F1 = 1.000"));
    let none = procabs(&["render", "--scene", p(&scene), "--built", p(&empty)]);
    assert!(String::from_utf8_lossy(&none.stdout).contains("F1 = 0.000"));

    let all = procabs(&["render", "--stimuli"]);
    assert!(all.status.success());
    assert_eq!(String::from_utf8_lossy(&all.stdout).matches("F1 = 1.000").count(), 3);
}

#[test]
fn render_trace_trials() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let r = procabs(&["simulate", "--n-sequences", "1", "--iterations", "1", "--w", "1.5", "--beta", "0.3", "--out-dir", p(&out)]);
    assert!(r.status.success());
    let trace = out.join("trace.json");
    let ok = procabs(&["render", "--trace", p(&trace), "--dyad", "0", "--trial", "12"]);
    assert!(ok.status.success());
    assert!(String::from_utf8_lossy(&ok.stdout).contains("F1 = "));
    assert_eq!(procabs(&["render", "--trace", p(&trace)]).status.code(), Some(2));
    assert_eq!(procabs(&["render", "--trace", p(&trace), "--trial", "13"]).status.code(), Some(2));
    assert_eq!(procabs(&["render", "--trace", p(&trace), "--dyad", "5", "--trial", "1"]).status.code(), Some(2));
}

#[test]
fn unwritable_output_is_an_io_error() {
    let r = procabs(&["gen-seq", "--out", "/nonexistent-dir/seqs"]);
    assert_eq!(r.status.code(), Some(3));
}
