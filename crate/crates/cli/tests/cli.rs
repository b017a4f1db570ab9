use std::path::Path;
use std::process::{Command, Output};

use diffcore::suite::primitive_probes;

fn hsda(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hsda"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = hsda(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    v.sort();
    v
}

const TOY: &str = "scale = toy\nsynth_n = 6\nmax_epochs = 3\npatience = 3\nbatch_size = 8\n";

#[test]
fn synth_is_balanced_and_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["synth", "--n", "20", "--seed", "3", "--out", p(&a)]);
    ok(&["synth", "--n", "20", "--seed", "3", "--out", p(&b)]);
    let text = String::from_utf8(read(&a.join("synthetic.csv"))).unwrap();
    let headers: Vec<&str> = text.lines().filter(|l| l.ends_with(",AD") || l.ends_with(",HC")).collect();
    assert_eq!(headers.len(), 40);
    assert_eq!(headers.iter().filter(|h| h.ends_with("AD")).count(), 20);
    assert_eq!(read(&a.join("synthetic.csv")), read(&b.join("synthetic.csv")));
    assert!(a.join("run_config.txt").exists());
    let cfg = String::from_utf8(read(&a.join("run_config.txt"))).unwrap();
    assert!(cfg.contains("synth_n = 20") && cfg.contains("seed = 3"));
}

#[test]
fn preprocess_and_render_synthetic_data() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--n", "3", "--out", p(&data)]);
    let raw = data.join("synthetic.csv");
    let (a, b) = (dir.path().join("pa"), dir.path().join("pb"));
    ok(&["preprocess", p(&raw), "--out", p(&a)]);
    ok(&["preprocess", p(&raw), "--out", p(&b)]);
    let names = files(&a);
    assert_eq!(names.len(), 6 + 2);
    assert!(names.contains(&"S001_1.csv".to_string()));
    for n in &names {
        assert_eq!(read(&a.join(n)), read(&b.join(n)), "{n}");
    }
    let manifest = String::from_utf8(read(&a.join("manifest.csv"))).unwrap();
    assert_eq!(manifest.lines().filter(|l| l.contains(",ok,")).count(), 6);
    let signal = String::from_utf8(read(&a.join("S001_1.csv"))).unwrap();
    assert!(signal.lines().next().unwrap().split(',').count() == 9);

    let (r1, r2) = (dir.path().join("r1"), dir.path().join("r2"));
    ok(&["render", p(&raw), "--out", p(&r1)]);
    ok(&["render", p(&raw), "--size", "64", "--out", p(&r2)]);
    assert!(read(&r1.join("S002_1.ppm")).starts_with(b"P6\n128 128\n255\n"));
    assert!(read(&r2.join("S002_1.ppm")).starts_with(b"P6\n64 64\n255\n"));
    assert_eq!(read(&r1.join("S002_1.ppm")).len(), 15 + 128 * 128 * 3);
    assert!(r2.join("run_config.txt").exists());
}

fn trace(seed: usize, n: usize) -> String {
    let mut s = String::new();
    for i in 0..n {
        let t = i as f64 * 5.0;
        let u = t / 150.0 + seed as f64;
        s.push_str(&format!("{t},{},{},{}\n", 100.0 * u.cos(), 80.0 * u.sin(), 400.0 + 30.0 * (t / 90.0).sin()));
    }
    s
}

#[test]
fn missing_task_appears_in_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("two.csv");
    let text = format!(
        "a,1,HC\n{}\na,2,HC\n{}\nb,1,AD\n{}",
        trace(0, 60),
        trace(1, 60),
        trace(2, 60)
    );
    std::fs::write(&raw, text).unwrap();
    let out = dir.path().join("out");
    ok(&["preprocess", p(&raw), "--out", p(&out)]);
    assert!(out.join("a_1.csv").exists() && out.join("a_2.csv").exists() && out.join("b_1.csv").exists());
    let manifest = String::from_utf8(read(&out.join("manifest.csv"))).unwrap();
    assert!(manifest.lines().any(|l| l.starts_with("b,2,") && l.contains("dropped")), "{manifest}");
}

#[test]
fn train_then_evaluate_reproduces_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("toy.cfg");
    std::fs::write(&cfg, TOY).unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--config", p(&cfg), "--out", p(&data)]);
    let run = dir.path().join("run");
    ok(&["train", p(&data), "--config", p(&cfg), "--out", p(&run)]);
    for f in ["model.ckpt", "model.cfg", "history.csv", "metrics.txt", "metrics_table.txt", "run_config.txt", "test_ids.txt"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let metrics = String::from_utf8(read(&run.join("metrics.txt"))).unwrap();
    for key in ["accuracy", "precision", "recall", "f1"] {
        assert!(metrics.lines().any(|l| l.starts_with(&format!("{key} = "))), "{key}");
    }
    let history = String::from_utf8(read(&run.join("history.csv"))).unwrap();
    assert_eq!(history.lines().next().unwrap(), "epoch,lr,train_loss,val_acc");

    let eval = dir.path().join("eval");
    let ckpt = run.join("model.ckpt");
    let ids = run.join("test_ids.txt");
    ok(&["evaluate", p(&data), "--config", p(&cfg), "--checkpoint", p(&ckpt), "--subset", p(&ids), "--out", p(&eval)]);
    assert_eq!(read(&eval.join("metrics.txt")), read(&run.join("metrics.txt")));

    let again = dir.path().join("again");
    ok(&["train", p(&data), "--config", p(&cfg), "--out", p(&again)]);
    assert_eq!(read(&again.join("history.csv")), read(&run.join("history.csv")));
    assert_eq!(read(&again.join("model.ckpt")), read(&run.join("model.ckpt")));

    let other = dir.path().join("other");
    ok(&["train", p(&data), "--config", p(&cfg), "--seed", "7", "--out", p(&other)]);
    assert_ne!(read(&other.join("history_fold0.csv")), read(&run.join("history_fold0.csv")));
}

#[test]
fn gradcheck_passes_and_lists_primitives() {
    let stdout = ok(&["gradcheck", "--scale", "toy"]);
    for probe in primitive_probes(0) {
        assert!(stdout.lines().any(|l| l.starts_with(&probe.name)), "{} missing", probe.name);
    }
    assert!(stdout.lines().any(|l| l.starts_with("model/")));
    assert!(stdout.contains("max rel err"));
    assert!(!stdout.contains("FAIL"));
}

#[test]
fn gradcheck_flags_wrong_backward_rule() {
    let out = hsda(&["gradcheck", "--inject-faulty-rule"]);
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.lines().any(|l| l.starts_with("faulty_square") && l.ends_with("FAIL")));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "learning_rate = 0.1\n").unwrap();
    assert_eq!(hsda(&["synth", "--config", p(&cfg), "--out", p(dir.path())]).status.code(), Some(2));
    assert_eq!(hsda(&["synth"]).status.code(), Some(2));
    assert_eq!(hsda(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(hsda(&["synth", "--raw-format", "xml", "--out", p(dir.path())]).status.code(), Some(2));
    let raw = dir.path().join("broken.csv");
    std::fs::write(&raw, "not,a,header\n1,2,3,4\n").unwrap();
    let out = hsda(&["preprocess", p(&raw), "--out", p(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}
