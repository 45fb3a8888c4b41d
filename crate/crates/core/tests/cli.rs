use std::path::Path;
use std::process::{Command, Output};

fn masa_kit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_masa-kit")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn dump_decay_writes_matrices() {
    let dir = tempfile::tempdir().unwrap();
    let one = dir.path().join("one.csv");
    let o = masa_kit(&["dump-decay", "--height", "1", "--width", "1", "--gamma", "0.5", "--out", path_str(&one)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(&one).unwrap(), "1\n");

    let out = dir.path().join("d.csv");
    let o = masa_kit(&[
        "dump-decay", "--height", "3", "--width", "4", "--gamma", "0.8", "--out", path_str(&out), "--decomposed", "--kron-check",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let diff: f64 = text.lines().find_map(|l| l.strip_prefix("kron max abs diff: ")).unwrap().parse().unwrap();
    assert!(diff < 1e-12);
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 12);
    assert_eq!(std::fs::read_to_string(dir.path().join("d_h.csv")).unwrap().lines().count(), 3);
    assert_eq!(std::fs::read_to_string(dir.path().join("d_w.csv")).unwrap().lines().count(), 4);
}

#[test]
fn dump_decay_reports_unwritable_path() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("no").join("such.csv");
    let o = masa_kit(&["dump-decay", "--height", "2", "--width", "2", "--gamma", "0.5", "--out", path_str(&bad)]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.contains("such.csv"));
}

#[test]
fn model_stats_for_presets_and_configs() {
    let o = masa_kit(&["model-stats", "--preset", "rmt-l"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let params: f64 = text.lines().find_map(|l| l.strip_prefix("params: ")).unwrap().split(' ').next().unwrap().parse().unwrap();
    assert!((params / 95e6 - 1.0).abs() <= 0.10);
    assert!(text.contains("stage3") && text.contains("14x14"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.json");
    std::fs::write(&cfg, masa_kit::blocks::ModelConfig::preset("tiny").unwrap().to_json().unwrap()).unwrap();
    let o = masa_kit(&["model-stats", "--config", path_str(&cfg), "--resolution", "64"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("@ 64x64"));

    let o = masa_kit(&["model-stats", "--preset", "rmt-xxl"]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1);
    assert!(err.contains("rmt-t") && err.contains("rmt-l"));
}

#[test]
fn scaling_writes_checked_records() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.csv");
    let o = Command::new(env!("CARGO_BIN_EXE_masa-kit"))
        .args(["scaling", "--modes", "full,decomposed", "--sides", "2,4,128", "--head-dim", "8", "--out", path_str(&out)])
        .env("MASA_KIT_THREADS", "2")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("capped at 96"));
    let text = std::fs::read_to_string(&out).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    for r in &rows {
        assert_eq!(r[4], r[5], "analytic vs measured");
        assert_eq!(r[7], "2");
    }

    let o = masa_kit(&["scaling", "--repeats", "2", "--out", path_str(&out)]);
    assert!(!o.status.success());
    let o = masa_kit(&["scaling", "--modes", "sparse", "--out", path_str(&out)]);
    assert!(!o.status.success());
}

#[test]
fn bad_thread_count_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.csv");
    let o = Command::new(env!("CARGO_BIN_EXE_masa-kit"))
        .args(["dump-decay", "--height", "2", "--width", "2", "--gamma", "0.5", "--out", path_str(&out)])
        .env("MASA_KIT_THREADS", "zero")
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(stderr(&o).contains("MASA_KIT_THREADS"));
}

#[test]
fn train_demo_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    let o = masa_kit(&["train-demo", "--steps", "0", "--out", path_str(&empty)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("initial accuracy"));
    assert_eq!(std::fs::read_to_string(&empty).unwrap(), "step,loss,train_accuracy\n");

    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for p in [&a, &b] {
        let o = masa_kit(&["train-demo", "--seed", "3", "--steps", "4", "--out", path_str(p)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let text = std::fs::read(&a).unwrap();
    assert_eq!(text, std::fs::read(&b).unwrap());
    assert_eq!(String::from_utf8(text).unwrap().lines().count(), 2);
}
